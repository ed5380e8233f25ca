#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "chain_of_chains.hpp"
#include "em.hpp"
#include "pomdp_io.hpp"

namespace hfsc {

enum class Family { flat, hierarchical, factored };

inline std::string to_string(Family f) {
    switch (f) {
    case Family::flat:
        return "flat";
    case Family::hierarchical:
        return "hierarchical";
    case Family::factored:
        return "factored";
    }
    return "?";
}

inline Family parse_family(const std::string& s) {
    if (s == "flat")
        return Family::flat;
    if (s == "hierarchical" || s == "hier")
        return Family::hierarchical;
    if (s == "factored")
        return Family::factored;
    throw std::invalid_argument("unknown controller family '" + s + "'");
}

/// "5,3" or "(5,3)" -> {5, 3}, base level first.
inline std::vector<std::size_t> parse_node_spec(std::string text) {
    std::erase_if(text, [](char c) { return c == '(' || c == ')' || c == ' '; });
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != item.size() || item.empty() || v == 0)
            throw std::invalid_argument("bad node count '" + item + "' in node spec");
        out.push_back(v);
    }
    if (out.empty())
        throw std::invalid_argument("empty node spec");
    return out;
}

inline std::string node_spec_string(const std::vector<std::size_t>& nodes) {
    std::string s = "(";
    for (std::size_t i = 0; i < nodes.size(); ++i)
        s += (i ? "," : "") + std::to_string(nodes[i]);
    return s + ")";
}

inline ControllerStructure make_structure(Family f, const std::vector<std::size_t>& nodes) {
    switch (f) {
    case Family::flat: {
        if (nodes.size() != 1)
            throw std::invalid_argument("flat controllers take a single node count");
        return ControllerStructure::flat(nodes[0]);
    }
    case Family::hierarchical:
        return nodes.size() == 1 ? ControllerStructure::flat(nodes[0]) : ControllerStructure::hierarchical(nodes);
    case Family::factored:
        return nodes.size() == 1 ? ControllerStructure::flat(nodes[0]) : ControllerStructure::factored(nodes);
    }
    throw std::logic_error("unreachable");
}

struct LoadedProblem {
    std::string name;
    PomdpModel model;
};

/**
 * Problem sources: a path to a POMDP file, or a builtin generator such as
 * "chain-of-chains:n=3,reward=100,discount=0.95".
 */
inline LoadedProblem load_problem(const std::string& source, const std::filesystem::path& base_dir = {}) {
    const std::string builtin = "chain-of-chains";
    if (source.rfind(builtin, 0) == 0) {
        std::size_t n = 3;
        double reward = 100.0, discount = 0.95;
        if (source.size() > builtin.size()) {
            if (source[builtin.size()] != ':')
                throw std::invalid_argument("unknown generator '" + source + "'");
            std::stringstream ss(source.substr(builtin.size() + 1));
            std::string kv;
            while (std::getline(ss, kv, ',')) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw std::invalid_argument("generator parameter '" + kv + "' is not key=value");
                const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
                try {
                    if (key == "n")
                        n = std::stoul(val);
                    else if (key == "reward")
                        reward = std::stod(val);
                    else if (key == "discount" || key == "gamma")
                        discount = std::stod(val);
                    else
                        throw std::invalid_argument("unknown chain-of-chains parameter '" + key + "'");
                } catch (const std::invalid_argument&) {
                    throw;
                } catch (const std::exception&) {
                    throw std::invalid_argument("bad value for chain-of-chains parameter '" + key + "'");
                }
            }
        }
        return {"chain-of-chains-" + std::to_string(n), make_chain_of_chains(n, reward, discount)};
    }
    std::filesystem::path p(source);
    if (!std::filesystem::exists(p) && !base_dir.empty() && p.is_relative() && std::filesystem::exists(base_dir / p))
        p = base_dir / p;
    std::string name = p.filename().string();
    if (auto dot = name.find('.'); dot != std::string::npos)
        name = name.substr(0, dot);
    return {name, load_pomdp(p.string())};
}

struct ExperimentSpec {
    std::string problem;
    std::string label; ///< optional display name; defaults to the problem name
    Family family = Family::factored;
    std::vector<std::size_t> nodes{5, 3};
    EmConfig em;
    std::optional<double> gamma; ///< overrides the problem's discount
    std::string output;          ///< per-spec CSV output, optional

    void validate() const {
        if (problem.empty())
            throw std::invalid_argument("experiment needs a problem source");
        if (nodes.empty())
            throw std::invalid_argument("experiment needs a node spec");
        for (auto n : nodes)
            if (n < 1)
                throw std::invalid_argument("node counts must be at least 1");
        if (gamma && !(*gamma > 0.0 && *gamma < 1.0))
            throw std::invalid_argument("discount override must lie in (0, 1)");
        em.validate();
        make_structure(family, nodes).validate();
    }
};

/// Reads one experiment object; unspecified fields come from `defaults`.
inline ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec defaults = {}) {
    ExperimentSpec s = std::move(defaults);
    auto& e = s.em;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (k == "problem")
            s.problem = v.get<std::string>();
        else if (k == "name" || k == "label")
            s.label = v.get<std::string>();
        else if (k == "family")
            s.family = parse_family(v.get<std::string>());
        else if (k == "nodes")
            s.nodes = v.is_string() ? parse_node_spec(v.get<std::string>()) : v.get<std::vector<std::size_t>>();
        else if (k == "iterations")
            e.iterations = v.get<std::size_t>();
        else if (k == "t_max" || k == "tmax")
            e.t_max = v.get<std::size_t>();
        else if (k == "gamma" || k == "discount")
            s.gamma = v.get<double>();
        else if (k == "m_step" || k == "mstep")
            e.m_step = parse_m_step(v.get<std::string>());
        else if (k == "c" || k == "softening")
            e.softening = v.get<double>();
        else if (k == "sigma" || k == "noise_sigma")
            e.noise_sigma = v.get<double>();
        else if (k == "per_entry_noise")
            e.per_entry_noise = v.get<bool>();
        else if (k == "restarts" || k == "seeds")
            e.restarts = v.get<std::size_t>();
        else if (k == "seed")
            e.seed = v.get<std::uint64_t>();
        else if (k == "e_step")
            e.e_step = v.get<std::string>() == "exact" ? EStepMode::exact : EStepMode::separable;
        else if (k == "threads")
            e.threads = v.get<std::size_t>();
        else if (k == "output")
            s.output = v.get<std::string>();
        else
            throw std::invalid_argument("unknown experiment field '" + k + "'");
    }
    return s;
}

/**
 * Experiment file: either an array of experiment objects or an object with an
 * optional "defaults" object and an "experiments" array.
 */
inline std::vector<ExperimentSpec> parse_experiment_file(const nlohmann::json& j) {
    ExperimentSpec defaults;
    const nlohmann::json* list = &j;
    if (j.is_object()) {
        if (j.contains("defaults"))
            defaults = spec_from_json(j.at("defaults"));
        list = &j.at("experiments");
    }
    if (!list->is_array())
        throw std::invalid_argument("experiment file needs an array of experiments");
    std::vector<ExperimentSpec> out;
    for (const auto& item : *list)
        out.push_back(spec_from_json(item, defaults));
    return out;
}

inline std::vector<ExperimentSpec> load_experiment_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read experiment file " + path);
    return parse_experiment_file(nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true));
}

struct ResultRow {
    std::string kind = "run"; ///< "run" or "aggregate"
    std::string problem;
    std::size_t num_states = 0, num_actions = 0, num_observations = 0;
    std::string family;
    std::string nodes;
    std::optional<std::uint64_t> seed; ///< empty on aggregate rows
    std::size_t iterations = 0;
    std::size_t t_max = 0;
    double gamma = 0.0;
    double wall_ms = 0.0;
    double likelihood = 0.0;
    double value = 0.0;
    std::size_t best_iteration = 0;
    double wall_ms_std = 0.0;
    double likelihood_std = 0.0;
    double value_std = 0.0;
    double best_value = 0.0;
};

inline const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols = {
        "kind",   "problem",    "S",          "A",     "O",         "family",         "nodes",
        "seed",   "iterations", "t_max",      "gamma", "wall_ms",   "likelihood",     "value",
        "best_iter", "wall_ms_std", "likelihood_std", "value_std", "best_value"};
    return cols;
}

namespace detail {

/// Shortest text that parses back to the same double.
inline std::string csv_real(double v) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string q = "\"";
    for (char c : s)
        q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

} // namespace detail

inline void write_csv_header(std::ostream& out) {
    const auto& cols = csv_columns();
    for (std::size_t i = 0; i < cols.size(); ++i)
        out << (i ? "," : "") << cols[i];
    out << '\n';
}

inline void write_csv_row(std::ostream& out, const ResultRow& r) {
    using detail::csv_field;
    using detail::csv_real;
    out << r.kind << ',' << csv_field(r.problem) << ',' << r.num_states << ',' << r.num_actions << ','
        << r.num_observations << ',' << r.family << ',' << csv_field(r.nodes) << ','
        << (r.seed ? std::to_string(*r.seed) : "") << ',' << r.iterations << ',' << r.t_max << ','
        << csv_real(r.gamma) << ',' << csv_real(r.wall_ms) << ',' << csv_real(r.likelihood) << ','
        << csv_real(r.value) << ',' << r.best_iteration << ',' << csv_real(r.wall_ms_std) << ','
        << csv_real(r.likelihood_std) << ',' << csv_real(r.value_std) << ',' << csv_real(r.best_value) << '\n';
}

inline void write_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    write_csv_header(out);
    for (const auto& r : rows)
        write_csv_row(out, r);
}

struct SpecResult {
    ExperimentSpec spec;
    std::vector<ResultRow> rows; ///< per seed, then the aggregate
    std::optional<RestartSummary> summary;
    std::optional<ControllerStructure> structure;
    std::string error;
};

/// Runs one experiment. Wall time covers EM only, not parsing.
inline SpecResult run_experiment(const ExperimentSpec& spec, const std::filesystem::path& base_dir = {}) {
    SpecResult out;
    out.spec = spec;
    spec.validate();
    auto problem = load_problem(spec.problem, base_dir);
    if (spec.gamma)
        problem.model.set_discount(*spec.gamma);
    problem.model.validate();
    const auto structure = make_structure(spec.family, spec.nodes);
    if (structure.size(0) < problem.model.num_actions())
        std::clog << "warning: " << problem.name << ": base level has " << structure.size(0)
                  << " nodes but the problem has " << problem.model.num_actions() << " actions\n";
    auto summary = multi_restart(problem.model, structure, spec.em);

    const std::string name = spec.label.empty() ? problem.name : spec.label;
    auto base_row = [&] {
        ResultRow r;
        r.problem = name;
        r.num_states = problem.model.num_states();
        r.num_actions = problem.model.num_actions();
        r.num_observations = problem.model.num_observations();
        r.family = structure.is_flat() ? "flat" : to_string(spec.family);
        r.nodes = node_spec_string(spec.nodes);
        r.t_max = spec.em.t_max;
        r.gamma = problem.model.discount();
        return r;
    };
    std::vector<double> lik;
    for (const auto& run : summary.runs) {
        auto r = base_row();
        r.seed = run.seed;
        r.iterations = run.iterations_run();
        r.wall_ms = run.wall_ms;
        r.likelihood = run.best_likelihood;
        r.value = run.value;
        r.best_iteration = run.best_iteration;
        r.best_value = run.value;
        lik.push_back(run.best_likelihood);
        out.rows.push_back(r);
    }
    auto agg = base_row();
    agg.kind = "aggregate";
    agg.iterations = spec.em.iterations;
    agg.wall_ms = summary.mean_wall_ms;
    agg.wall_ms_std = summary.std_wall_ms;
    std::tie(agg.likelihood, agg.likelihood_std) = mean_and_std(lik);
    agg.value = summary.mean_value;
    agg.value_std = summary.std_value;
    agg.best_iteration = summary.best_run().best_iteration;
    agg.best_value = summary.best_run().value;
    out.rows.push_back(agg);
    out.structure = structure;
    out.summary = std::move(summary);
    return out;
}

/// Runs every spec in order; a failing spec is logged and skipped.
inline std::vector<SpecResult> run_suite(const std::vector<ExperimentSpec>& specs,
                                         const std::filesystem::path& base_dir = {},
                                         std::ostream* log = &std::clog) {
    std::vector<SpecResult> out;
    for (const auto& spec : specs) {
        try {
            out.push_back(run_experiment(spec, base_dir));
        } catch (const std::exception& e) {
            SpecResult failed;
            failed.spec = spec;
            failed.error = e.what();
            if (log)
                *log << "error: experiment '" << spec.problem << "' " << node_spec_string(spec.nodes)
                     << " failed: " << e.what() << '\n';
            out.push_back(std::move(failed));
        }
    }
    return out;
}

inline std::vector<ResultRow> collect_rows(const std::vector<SpecResult>& results) {
    std::vector<ResultRow> rows;
    for (const auto& r : results)
        rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    return rows;
}

/// Plain-text table with one line per aggregate row: problem, family, nodes, time, value.
inline void write_summary_table(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << std::left << std::setw(20) << "problem" << std::setw(8) << "|S|" << std::setw(14) << "family"
        << std::setw(10) << "nodes" << std::setw(12) << "t(s)" << std::setw(24) << "V (mean +- std)"
        << "best V\n";
    for (const auto& r : rows) {
        if (r.kind != "aggregate")
            continue;
        std::ostringstream v, t;
        v << std::setprecision(4) << r.value << " +- " << std::setprecision(2) << r.value_std;
        t << std::setprecision(3) << r.wall_ms / 1000.0;
        out << std::left << std::setw(20) << r.problem << std::setw(8) << r.num_states << std::setw(14)
            << r.family << std::setw(10) << r.nodes << std::setw(12) << t.str() << std::setw(24) << v.str()
            << std::setprecision(4) << r.best_value << '\n';
    }
}

} // namespace hfsc
