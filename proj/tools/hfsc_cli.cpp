#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "hfsc/hfsc.hpp"

using namespace hfsc;

namespace {

struct RunOptions {
    std::string problem;
    std::string family = "factored";
    std::string nodes = "5,3";
    std::size_t iterations = 200;
    std::size_t t_max = 100;
    double gamma = 0.0;
    std::string m_step = "greedy_soft";
    std::string e_step = "separable";
    double softening = 3.0;
    double sigma = 1e-3;
    std::size_t restarts = 1;
    std::uint64_t seed = 1;
    std::size_t threads = 0;
    std::string out;
    std::string trace;
    std::string graph;
    std::string save;
};

void add_run_flags(CLI::App* cmd, RunOptions& o) {
    cmd->add_option("-p,--problem", o.problem, "POMDP file or chain-of-chains:n=3,reward=100,discount=0.95")
        ->required();
    cmd->add_option("-f,--family", o.family, "flat | hierarchical | factored")->capture_default_str();
    cmd->add_option("-n,--nodes", o.nodes, "node counts per level, base first, e.g. 5,3")->capture_default_str();
    cmd->add_option("-i,--iterations", o.iterations, "EM iterations")->capture_default_str();
    cmd->add_option("--tmax", o.t_max, "time mixture truncation")->capture_default_str();
    cmd->add_option("--gamma", o.gamma, "override the problem's discount");
    cmd->add_option("--mstep", o.m_step, "standard | greedy_soft")->capture_default_str();
    cmd->add_option("--estep", o.e_step, "separable | exact")->capture_default_str();
    cmd->add_option("-c,--softening", o.softening, "greedy softening constant")->capture_default_str();
    cmd->add_option("--sigma", o.sigma, "greedy noise standard deviation")->capture_default_str();
    cmd->add_option("-r,--restarts", o.restarts, "number of seeds")->capture_default_str();
    cmd->add_option("-s,--seed", o.seed, "first seed")->capture_default_str();
    cmd->add_option("-j,--threads", o.threads, "concurrent restarts (0 = all cores)");
    cmd->add_option("-o,--out", o.out, "CSV results file (default: stdout)");
    cmd->add_option("--trace", o.trace, "per-iteration likelihood/value trace CSV");
    cmd->add_option("--graph", o.graph, "write the best controller as a Graphviz file");
    cmd->add_option("--save", o.save, "write the best controller as JSON");
}

ExperimentSpec to_spec(const RunOptions& o) {
    ExperimentSpec s;
    s.problem = o.problem;
    s.family = parse_family(o.family);
    s.nodes = parse_node_spec(o.nodes);
    s.em.iterations = o.iterations;
    s.em.t_max = o.t_max;
    s.em.m_step = parse_m_step(o.m_step);
    if (o.e_step != "separable" && o.e_step != "exact")
        throw std::invalid_argument("unknown E-step mode '" + o.e_step + "'");
    s.em.e_step = o.e_step == "exact" ? EStepMode::exact : EStepMode::separable;
    s.em.softening = o.softening;
    s.em.noise_sigma = o.sigma;
    s.em.restarts = o.restarts;
    s.em.seed = o.seed;
    s.em.threads = o.threads;
    s.em.track_exact_value = !o.trace.empty();
    if (o.gamma > 0.0)
        s.gamma = o.gamma;
    return s;
}

void write_rows(const std::string& path, const std::vector<ResultRow>& rows) {
    if (path.empty() || path == "-") {
        write_csv(std::cout, rows);
        return;
    }
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    write_csv(out, rows);
}

void write_trace(const std::string& path, const RestartSummary& summary) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << "seed,iteration,likelihood,value\n";
    for (const auto& run : summary.runs) {
        out << run.seed << ",0," << detail::csv_real(run.initial_likelihood) << ",\n";
        for (std::size_t i = 0; i < run.likelihood_trace.size(); ++i)
            out << run.seed << ',' << i + 1 << ',' << detail::csv_real(run.likelihood_trace[i]) << ','
                << (i < run.value_trace.size() ? detail::csv_real(run.value_trace[i]) : "") << '\n';
    }
}

int cmd_run(const RunOptions& o) {
    const auto spec = to_spec(o);
    auto res = run_experiment(spec);
    write_rows(o.out, res.rows);
    write_summary_table(std::cerr, res.rows);
    const auto& best = res.summary->best_run();
    if (!o.trace.empty())
        write_trace(o.trace, *res.summary);
    if (!o.graph.empty() || !o.save.empty()) {
        auto problem = load_problem(spec.problem);
        if (!o.graph.empty()) {
            std::ofstream g(o.graph);
            g << controller_graph(*res.structure, best.params, problem.model);
        }
        if (!o.save.empty())
            save_controller(o.save, *res.structure, best.params);
    }
    return 0;
}

int cmd_suite(const std::string& file, const std::string& out_path, const std::string& summary_path) {
    const auto specs = load_experiment_file(file);
    const auto results = run_suite(specs, std::filesystem::path(file).parent_path());
    const auto rows = collect_rows(results);
    write_rows(out_path, rows);
    for (const auto& r : results)
        if (!r.spec.output.empty() && r.error.empty()) {
            std::ofstream o(r.spec.output);
            write_csv(o, r.rows);
        }
    if (!summary_path.empty()) {
        std::ofstream s(summary_path);
        write_summary_table(s, rows);
    }
    write_summary_table(std::cerr, rows);
    std::size_t failed = 0;
    for (const auto& r : results)
        failed += !r.error.empty();
    return failed ? 1 : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical finite-state controller search for POMDPs by EM"};
    app.require_subcommand(1);

    std::string problem, controller_path, out_path, summary_path, suite_file;
    double threshold = kGraphThreshold;

    auto* info = app.add_subcommand("info", "print a JSON summary of a problem");
    info->add_option("problem", problem, "POMDP file or generator")->required();

    auto* ser = app.add_subcommand("serialize", "write a problem in canonical POMDP format");
    ser->add_option("problem", problem, "POMDP file or generator")->required();
    ser->add_option("-o,--out", out_path, "output file (default: stdout)");

    RunOptions run_opts;
    auto* run = app.add_subcommand("run", "optimize a controller with EM");
    add_run_flags(run, run_opts);

    auto* suite = app.add_subcommand("suite", "run an experiment file");
    suite->add_option("file", suite_file, "JSON experiment file")->required()->check(CLI::ExistingFile);
    suite->add_option("-o,--out", out_path, "CSV results file (default: stdout)");
    suite->add_option("--summary", summary_path, "plain-text summary table");

    auto* eval = app.add_subcommand("evaluate", "exact value of a saved controller");
    eval->add_option("problem", problem, "POMDP file or generator")->required();
    eval->add_option("controller", controller_path, "controller JSON")->required()->check(CLI::ExistingFile);

    auto* graph = app.add_subcommand("graph", "Graphviz listing of a saved controller");
    graph->add_option("problem", problem, "POMDP file or generator")->required();
    graph->add_option("controller", controller_path, "controller JSON")->required()->check(CLI::ExistingFile);
    graph->add_option("--threshold", threshold, "hide edges below this probability")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*info) {
            auto p = load_problem(problem);
            std::cout << model_summary(p.model, p.name).dump(2) << '\n';
        } else if (*ser) {
            auto p = load_problem(problem);
            if (out_path.empty()) {
                write_pomdp(std::cout, p.model);
            } else {
                std::ofstream out(out_path);
                write_pomdp(out, p.model);
            }
        } else if (*run) {
            return cmd_run(run_opts);
        } else if (*suite) {
            return cmd_suite(suite_file, out_path, summary_path);
        } else if (*eval) {
            auto p = load_problem(problem);
            auto [s, params] = load_controller(controller_path);
            std::printf("%.10g\n", evaluate_exact(p.model, s, params));
        } else if (*graph) {
            auto p = load_problem(problem);
            auto [s, params] = load_controller(controller_path);
            std::cout << controller_graph(s, params, p.model, threshold);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
