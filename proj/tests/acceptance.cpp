// Acceptance suite: one PASS/FAIL line per criterion. Criterion 10 is reported
// but does not affect the exit status.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "support.hpp"

using namespace hfsc;
using namespace hfsc::testing;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string data(const std::string& name) { return std::string(HFSC_DATA_DIR) + "/" + name; }

ControllerStructure random_layered(RandomSource& rng, bool constrained) {
    const std::size_t levels = 2 + static_cast<std::size_t>(uniform01(rng) * 2);
    std::vector<std::size_t> sizes;
    for (std::size_t l = 0; l < levels; ++l)
        sizes.push_back(2 + static_cast<std::size_t>(uniform01(rng) * 2));
    return constrained ? ControllerStructure::hierarchical(sizes) : ControllerStructure::factored(sizes);
}

Outcome likelihood_value_oracle() {
    RandomSource rng(101);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t S = 1 + static_cast<std::size_t>(uniform01(rng) * 5);
        const std::size_t A = 1 + static_cast<std::size_t>(uniform01(rng) * 3);
        const std::size_t O = 1 + static_cast<std::size_t>(uniform01(rng) * 3);
        const std::size_t N = 1 + static_cast<std::size_t>(uniform01(rng) * 4);
        auto m = random_model(S, A, O, 0.9, rng, 0.2);
        auto s = ControllerStructure::flat(N);
        auto p = random_params(s, A, O, rng, true);
        const auto r = normalize_rewards(m);
        std::size_t t_max = 1;
        while (truncation_bound(0.9, t_max, r.r_min, r.r_max) >= 1e-4)
            ++t_max;
        const double v = value_from_likelihood(likelihood(m, s, p, t_max), r.r_min, r.r_max, 0.9);
        worst = std::max(worst, std::abs(v - evaluate_exact(m, s, p)));
    }
    return {worst <= 2e-4, fmt("50 instances, max |V_lik - V_exact| = %.3g (limit 2e-4)", worst)};
}

Outcome enumeration_oracle() {
    RandomSource rng(102);
    const std::vector<std::pair<ControllerStructure, std::size_t>> cases = {
        {ControllerStructure::flat(2), 6},           {ControllerStructure::flat(3), 4},
        {ControllerStructure::flat(4), 3},           {ControllerStructure::hierarchical({2, 2}), 3},
        {ControllerStructure::factored({2, 2}), 3},  {ControllerStructure::hierarchical({3, 2}), 2},
        {ControllerStructure::factored({2, 3}), 2},  {ControllerStructure::hierarchical({2, 2, 2}), 1}};
    double worst = 0.0;
    int n = 0;
    for (const auto& [s, S] : cases)
        for (std::size_t t_max : {1u, 2u, 3u, 4u}) {
            auto m = random_model(S, 2, 2, 0.9, rng, 0.3);
            auto p = random_params(s, 2, 2, rng, true);
            const double got = likelihood(m, s, p, t_max);
            const double oracle = enumerate_likelihood(m, flatten(s, p, 2, 2), t_max);
            worst = std::max(worst, std::abs(got - oracle));
            ++n;
        }
    return {worst <= 1e-10, fmt("%d instances (|N||S| <= 12, t_max <= 4), max error %.3g (limit 1e-10)", n, worst)};
}

Outcome monotonicity() {
    RandomSource rng(103);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const std::size_t S = 2 + i % 4;
        auto m = random_model(S, 2 + i % 2, 2 + i % 2, 0.95, rng, 0.2);
        ControllerStructure s = i % 3 == 0   ? ControllerStructure::flat(3)
                                : i % 3 == 1 ? ControllerStructure::factored({3, 2})
                                             : ControllerStructure::hierarchical({3, 2});
        EmConfig cfg;
        cfg.m_step = MStep::standard;
        cfg.iterations = 100;
        cfg.t_max = 100;
        auto r = run_em(m, s, cfg, 1 + i);
        double prev = r.initial_likelihood;
        for (double l : r.likelihood_trace) {
            worst = std::max(worst, prev - l);
            prev = l;
        }
    }
    return {worst <= 1e-10, fmt("20 instances x 100 iterations, largest decrease %.3g (limit 1e-10)", worst)};
}

Outcome benchmark(const std::string& file, std::vector<std::size_t> nodes, bool use_best, double threshold,
                  double max_run_ms = 30000.0) {
    auto m = load_pomdp(data(file));
    m.set_discount(0.95);
    EmConfig cfg;
    cfg.iterations = 200;
    cfg.t_max = 100;
    cfg.restarts = 10;
    cfg.seed = 1;
    auto res = multi_restart(m, ControllerStructure::factored(nodes), cfg);
    double slowest = 0.0;
    for (const auto& r : res.runs)
        slowest = std::max(slowest, r.wall_ms);
    const double v = use_best ? res.best_run().value : res.mean_value;
    const bool ok = v >= threshold && slowest <= max_run_ms;
    return {ok, fmt("%s %s: mean %.4f +- %.4f, best %.4f (need %s >= %.2f), slowest run %.0f ms", file.c_str(),
                    node_spec_string(nodes).c_str(), res.mean_value, res.std_value, res.best_run().value,
                    use_best ? "best" : "mean", threshold, slowest)};
}

Outcome chain_of_chains() {
    auto m = make_chain_of_chains(3, 100.0, 0.95);
    auto flat = ControllerStructure::flat(10);
    auto p = make_param_shape(flat, 4, 1);
    for (std::size_t k = 0; k < 10; ++k) {
        p.action(k, k < 9 ? k % 3 : 3) = 1.0;
        p.successor[0](k, (k + 1) % 10) = 1.0;
    }
    const double opt = evaluate_exact(m, flat, p);
    EmConfig cfg;
    cfg.restarts = 10;
    auto res = multi_restart(m, ControllerStructure::factored({10, 3}), cfg);
    const bool a = std::abs(opt - 157.07) <= 0.05;
    const bool b = res.mean_value >= 140.0;
    return {a && b, fmt("(a) optimal 10-node controller %.4f (need 157.07 +- 0.05) %s; (b) factored (10,3) mean "
                        "%.2f +- %.2f (need >= 140) %s",
                        opt, a ? "ok" : "FAIL", res.mean_value, res.std_value, b ? "ok" : "FAIL")};
}

Outcome paired_simulation() {
    RandomSource rng(107);
    int identical = 0;
    for (int i = 0; i < 10; ++i) {
        auto m = random_model(4, 3, 3, 0.95, rng, 0.2);
        auto s = random_layered(rng, i % 2 == 0);
        auto pol = compose(s, random_params(s, 3, 3, rng, true), 3, 3);
        auto fc = flatten(pol);
        RandomSource r1(500 + i), r2(500 + i);
        auto a = sample_trajectory(m, pol, 10000, r1);
        auto b = sample_trajectory(m, fc, 10000, r2);
        bool same = a.size() == b.size();
        for (std::size_t t = 0; same && t < a.size(); ++t)
            same = a[t].action == b[t].action;
        identical += same;
    }
    return {identical == 10, fmt("%d/10 controllers give identical action sequences over 10^4 steps", identical)};
}

/// Least-squares slope of log(time) against log(size).
double fitted_exponent(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
        sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    }
    return sxy / sxx;
}

/// Best-of-5 seconds per forward plus backward pass (collapse excluded).
double time_inference(const PomdpModel& m, const ControllerStructure& s, std::size_t t_max) {
    RandomSource rng(7);
    auto p = random_params(s, m.num_actions(), m.num_observations(), rng, true);
    auto k = build_kernel(m, s, p);
    const auto alpha0 = initial_alpha(k);
    const auto beta0 = terminal_beta(k, normalize_rewards(m));
    double best = 1e300;
    for (int trial = 0; trial < 5; ++trial) {
        int reps = 0;
        const auto start = std::chrono::steady_clock::now();
        double elapsed = 0.0;
        do {
            auto a = forward(k, alpha0, t_max);
            auto b = backward(k, beta0, t_max);
            if (a.size() != b.size())
                std::abort();
            ++reps;
            elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        } while (elapsed < 0.05);
        best = std::min(best, elapsed / reps);
    }
    return best;
}

Outcome scaling() {
    RandomSource rng(108);
    const auto m = random_model(4, 2, 4, 0.95, rng);
    std::vector<double> xs, flat_t, fact_t;
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
        xs.push_back(static_cast<double>(n));
        flat_t.push_back(time_inference(m, ControllerStructure::flat(n), 100));
    }
    std::vector<double> xf;
    for (std::size_t k : {3u, 4u, 6u, 8u}) {
        xf.push_back(static_cast<double>(k * k));
        fact_t.push_back(time_inference(m, ControllerStructure::factored({k, k}), 100));
    }
    const double ef = fitted_exponent(xs, flat_t);
    const double eh = fitted_exponent(xf, fact_t);
    const auto s = ControllerStructure::factored({6, 6});
    const double t1 = time_inference(m, s, 100), t2 = time_inference(m, s, 200);
    const double ratio = t2 / t1;
    const bool ok = ef >= 1.7 && ef <= 2.3 && eh <= 1.8 && ratio <= 2.2;
    std::string steps;
    for (std::size_t i = 1; i < xs.size(); ++i)
        steps += fmt("%s%.2f", i > 1 ? "/" : "", std::log(flat_t[i] / flat_t[i - 1]) / std::log(2.0));
    return {ok, fmt("flat exponent %.2f (need 1.7..2.3; per-doubling slopes %s), factored exponent %.2f (need <= "
                    "1.8), t_max 100->200 time ratio %.2f (need <= 2.2)",
                    ef, steps.c_str(), eh, ratio)};
}

Outcome init_shape() {
    RandomSource rng(109);
    EmConfig cfg;
    cfg.init_base.c2 = cfg.init_upper.c2 = cfg.init_action.c2 = 0.0;
    int bad = 0, checked = 0;
    for (std::size_t A : {2u, 3u, 4u, 7u})
        for (auto s : {ControllerStructure::hierarchical({5, 3}), ControllerStructure::factored({4, 3, 2}),
                       ControllerStructure::flat(5)}) {
            auto p = init_params(s, A, 2, cfg, rng);
            bad += p.initial_top[0] != 1.0;
            for (std::size_t n = 0; n < s.size(0); ++n)
                for (std::size_t a = 0; a < A; ++a, ++checked)
                    bad += p.action(n, a) != (a == n % A ? 101.0 : 1.0) / (static_cast<double>(A) + 100.0);
            for (std::size_t l = 0; l < s.num_levels(); ++l) {
                const double nl = static_cast<double>(s.size(l));
                const bool upper = l > 0;
                auto expect = [&](std::size_t cur, std::size_t c) {
                    return upper ? (c == cur ? 11.0 : 1.0) / (nl + 10.0) : 1.0 / nl;
                };
                if (uses_factored_tables(s)) {
                    const auto lay = level_layout(s, l, 2);
                    for (std::size_t r = 0; r < lay.rows(); ++r) {
                        const std::size_t cur = (r / lay.upper) % lay.self;
                        for (std::size_t c = 0; c < lay.self; ++c, ++checked)
                            bad += p.factored[l](r, c) != expect(cur, c);
                    }
                } else {
                    for (std::size_t o = 0; o < 2; ++o)
                        for (std::size_t cur = 0; cur < s.size(l); ++cur)
                            for (std::size_t c = 0; c < s.size(l); ++c, ++checked)
                                bad += p.successor[l](o * s.size(l) + cur, c) != expect(cur, c);
                }
            }
        }
    return {bad == 0, fmt("%d of %d noise-free entries differ from the closed forms", bad, checked)};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        bool gating;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "likelihood/value oracle", true, likelihood_value_oracle},
        {2, "exhaustive inference oracle", true, enumeration_oracle},
        {3, "EM monotonicity", true, monotonicity},
        {4, "paint benchmark", true, [] { return benchmark("paint.95.POMDP", {5, 3}, false, 3.0); }},
        {5, "4x4 maze", true, [] { return benchmark("4x4.95.POMDP", {3, 3}, true, 3.6); }},
        {6, "chain-of-chains", true, chain_of_chains},
        {7, "hierarchy semantics", true, paired_simulation},
        {8, "complexity scaling", true, scaling},
        {9, "initialization shape", true, init_shape},
        {10, "shuttle (non-gating)", false, [] { return benchmark("shuttle.95.POMDP", {5, 3}, false, 28.0); }},
    };
    int gating_failures = 0;
    for (const auto& c : criteria) {
        Outcome o;
        const auto start = std::chrono::steady_clock::now();
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                    secs);
        std::fflush(stdout);
        if (!o.pass && c.gating)
            ++gating_failures;
    }
    return gating_failures == 0 ? 0 : 1;
}
