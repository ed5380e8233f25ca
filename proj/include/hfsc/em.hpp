#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <future>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "controller.hpp"
#include "evaluate.hpp"
#include "inference.hpp"
#include "kernel.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

enum class MStep { standard, greedy_soft };

/// How the transition expectations combine forward and backward messages.
enum class EStepMode {
    separable, ///< one contraction of the time-collapsed ᾱ and β̄
    exact      ///< exact for the truncated mixture; one contraction per time step
};

/// Row initialization p ∝ c1 + c2 U + c3 δ.
struct InitConstants {
    double c1 = 1.0;
    double c2 = 1.0;
    double c3 = 0.0;
};

struct EmConfig {
    std::size_t t_max = 100;
    std::size_t iterations = 200;
    MStep m_step = MStep::greedy_soft;
    double softening = 3.0;
    double noise_sigma = 1e-3;
    bool per_entry_noise = true;
    InitConstants init_base{1.0, 1.0, 0.0};
    InitConstants init_upper{1.0, 1.0, 10.0};
    InitConstants init_action{1.0, 1.0, 100.0};
    std::size_t restarts = 1;
    std::uint64_t seed = 1;
    double convergence_epsilon = 0.0;
    EStepMode e_step = EStepMode::separable;
    bool track_exact_value = false;
    std::size_t threads = 0; ///< restarts run concurrently; 0 = hardware concurrency

    void validate() const {
        if (t_max < 1)
            throw std::invalid_argument("t_max must be at least 1");
        if (!(softening >= 0.0))
            throw std::invalid_argument("softening constant must be non-negative");
        if (!(noise_sigma >= 0.0))
            throw std::invalid_argument("noise sigma must be non-negative");
        if (restarts < 1)
            throw std::invalid_argument("restarts must be at least 1");
    }
};

inline std::string to_string(MStep m) { return m == MStep::standard ? "standard" : "greedy_soft"; }
inline MStep parse_m_step(const std::string& s) {
    if (s == "standard")
        return MStep::standard;
    if (s == "greedy_soft" || s == "greedy")
        return MStep::greedy_soft;
    throw std::invalid_argument("unknown M-step '" + s + "'");
}

/**
 * Initial parameters. The top level starts in node 0. Node rows mix a uniform
 * term, a random term and a "stay" term; action rows favour a = n mod |A|.
 * Descend rows have no stay term.
 */
inline ControllerParams init_params(const ControllerStructure& s, std::size_t num_actions,
                                    std::size_t num_observations, const EmConfig& cfg, RandomSource& rng) {
    auto p = make_param_shape(s, num_actions, num_observations);
    auto fill = [&](std::span<double> row, const InitConstants& k, std::optional<std::size_t> stay) {
        double z = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) {
            row[v] = k.c1 + k.c2 * uniform01(rng) + (stay && *stay == v ? k.c3 : 0.0);
            z += row[v];
        }
        for (double& x : row)
            x /= z;
    };
    auto consts = [&](std::size_t l) -> const InitConstants& { return l == 0 ? cfg.init_base : cfg.init_upper; };

    for (std::size_t n = 0; n < p.action.rows(); ++n)
        fill(p.action.row(n), cfg.init_action, n % num_actions);
    if (uses_factored_tables(s)) {
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            const auto lay = level_layout(s, l, num_observations);
            for (std::size_t o = 0; o < lay.num_observations; ++o)
                for (std::size_t low = 0; low < lay.lower; ++low)
                    for (std::size_t cur = 0; cur < lay.self; ++cur)
                        for (std::size_t up = 0; up < lay.upper; ++up)
                            fill(p.factored[l].row(lay.row(o, low, cur, up)), consts(l), cur);
        }
    } else {
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            const std::size_t nl = s.size(l);
            for (std::size_t o = 0; o < num_observations; ++o)
                for (std::size_t cur = 0; cur < nl; ++cur)
                    fill(p.successor[l].row(o * nl + cur), consts(l), cur);
        }
        for (std::size_t l = 0; l + 1 < s.num_levels(); ++l)
            for (std::size_t up = 0; up < s.size(l + 1); ++up)
                fill(p.descend[l].row(up), consts(l), std::nullopt);
    }
    return p;
}

/**
 * Expected counts for every parameter group, in the same shape as
 * ControllerParams (rows are unnormalized). `composed` holds the counts of the
 * per-level composed conditionals before they are folded back onto the
 * hierarchical primitives.
 */
struct ExpectationTables {
    ControllerParams counts;
    std::vector<ConditionalTable> composed;
    double likelihood = 0.0;
};

class NonFiniteExpectation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline ControllerParams zero_like(const ControllerParams& p) {
    ControllerParams z = p;
    auto clear = [](ConditionalTable& t) { std::fill(t.data().begin(), t.data().end(), 0.0); };
    std::fill(z.initial_top.begin(), z.initial_top.end(), 0.0);
    clear(z.action);
    for (auto& t : z.successor)
        clear(t);
    for (auto& t : z.descend)
        clear(t);
    for (auto& t : z.factored)
        clear(t);
    for (auto& v : z.initial_levels)
        std::fill(v.begin(), v.end(), 0.0);
    return z;
}

/// Counts of the transition slices between t and t+1: Σ f(n,s) p(a|n) T Z Π p(n'|..) g(n',s') * weight.
inline void accumulate_transition(const TwoSliceKernel& k, std::span<const double> f, std::span<const double> g,
                                  double weight, ConditionalTable& action_counts,
                                  std::vector<ConditionalTable>& level_counts) {
    const auto& model = k.model();
    const std::size_t ns = model.num_states(), na = model.num_actions(), no = model.num_observations();
    const std::size_t nn = k.num_nodes();
    if (weight == 0.0)
        return;

    // Action counts: f(n,s) p(a|n) Σ_s' T(s'|a,s) Σ_o' Z(o'|s',a) Σ_n' P(n'|n,o') g(n',s').
    std::vector<double> w, v, unused(k.size());
    k.observation_backward(g, w);
    k.state_backward(w, unused, &v);
    for (std::size_t a = 0; a < na; ++a)
        for (std::size_t s = 0; s < ns; ++s) {
            const double* fv = f.data() + s * nn;
            const double* vv = v.data() + (a * ns + s) * nn;
            for (std::size_t n = 0; n < nn; ++n)
                if (fv[n] != 0.0)
                    action_counts(k.base_node(n), a) += weight * fv[n] * k.action_prob(n, a) * vv[n];
        }

    // Node counts, one junction-chain pass per (s', o').
    std::vector<double> b, c;
    k.state_forward(f, b);
    for (std::size_t t = 0; t < ns; ++t)
        for (std::size_t o = 0; o < no; ++o) {
            if (!k.mix_observation(t, o, b, c))
                continue;
            k.accumulate_families(o, c, g.subspan(t * nn, nn), weight, level_counts);
        }
}

/**
 * Counts of the final slice, where R̃ is emitted: action counts f p(a|n) r̃(a,s),
 * and the node transition that follows it (it does not influence R̃, so its
 * posterior is the prior conditional).
 */
inline void accumulate_reward(const TwoSliceKernel& k, const NormalizedReward& reward, std::span<const double> f,
                              ConditionalTable& action_counts, std::vector<ConditionalTable>& level_counts) {
    const auto& model = k.model();
    const std::size_t ns = model.num_states(), na = model.num_actions(), no = model.num_observations();
    const std::size_t nn = k.num_nodes();
    std::vector<double> d(no * nn, 0.0);
    std::vector<double> y(no);
    for (std::size_t a = 0; a < na; ++a)
        for (std::size_t s = 0; s < ns; ++s) {
            const double r = reward(a, s);
            if (r == 0.0)
                continue;
            // y(o') = Σ_s' T(s'|a,s) Z(o'|s',a)
            std::fill(y.begin(), y.end(), 0.0);
            for (auto [t, p] : k.transitions(a, s))
                for (std::size_t o = 0; o < no; ++o)
                    y[o] += p * model.observation(t, a, o);
            const double* fv = f.data() + s * nn;
            for (std::size_t n = 0; n < nn; ++n) {
                if (fv[n] == 0.0)
                    continue;
                const double m = fv[n] * k.action_prob(n, a) * r;
                action_counts(k.base_node(n), a) += m;
                for (std::size_t o = 0; o < no; ++o)
                    d[o * nn + n] += m * y[o];
            }
        }
    const std::vector<double> ones(nn, 1.0);
    for (std::size_t o = 0; o < no; ++o)
        k.accumulate_families(o, std::span<const double>(d).subspan(o * nn, nn), ones, 1.0, level_counts);
}

inline void check_finite(const ConditionalTable& t, const std::string& name) {
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c)
            if (!std::isfinite(t(r, c)) || t(r, c) < 0.0)
                throw NonFiniteExpectation("invalid expectation in " + name + " at row " + std::to_string(r) +
                                           ", column " + std::to_string(c));
}

} // namespace detail

/**
 * Expected parameter counts under the posterior given R̃ = 1. With ᾱ, β̄ the
 * prior-weighted message sums, the transition part is
 *   γ/(1-γ) · ᾱ(n,s) p(a|n) T(s'|a,s) Z(o'|s',a) p(n'|n,o') β̄(n',s')
 * and the final-slice part ᾱ(n,s) p(a|n) r̃(a,s) (times the prior conditional
 * of the following node transition). The start node is clamped and gets no
 * counts.
 */
inline ExpectationTables e_step(const PomdpModel& model, const NormalizedReward& reward,
                                const ControllerStructure& s, const ControllerParams& params, const EmConfig& cfg) {
    const auto k = build_kernel(model, s, params);
    const std::size_t t_max = cfg.t_max;
    const double g = model.discount();
    const auto prior = time_prior(g, t_max);
    auto msg = collapse(forward(k, initial_alpha(k), t_max), backward(k, reward, t_max), prior);

    ExpectationTables out;
    out.likelihood = msg.likelihood;
    out.counts = detail::zero_like(params);
    for (const auto& t : k.policy().levels)
        out.composed.emplace_back(t.rows(), t.cols(), 0.0);
    auto& action_counts = out.counts.action;

    detail::accumulate_reward(k, reward, msg.alpha_bar, action_counts, out.composed);
    if (cfg.e_step == EStepMode::separable) {
        const double w = g / (1.0 - g);
        detail::accumulate_transition(k, msg.alpha_bar, msg.beta_bar, w, action_counts, out.composed);
    } else {
        // Σ_{t<T<=t_max} q_T α^t K β^{T-1-t}, grouped by t:
        //   B_t = γ^{t+1} Σ_{τ<=t_max-2-t} (1-γ)γ^τ β^τ + γ^{t_max} β^{t_max-1-t}
        std::vector<double> prefix(k.size(), 0.0), bt(k.size());
        const double tail = std::pow(g, static_cast<double>(t_max));
        std::size_t next_tau = 0;
        for (std::size_t t = t_max; t-- > 0;) {
            const std::size_t upto = t_max - 1 - t; // prefix covers τ < upto
            for (; next_tau < upto; ++next_tau) {
                const double wt = (1.0 - g) * std::pow(g, static_cast<double>(next_tau));
                for (std::size_t i = 0; i < prefix.size(); ++i)
                    prefix[i] += wt * msg.beta[next_tau][i];
            }
            const double gt = std::pow(g, static_cast<double>(t + 1));
            const auto& last = msg.beta[t_max - 1 - t];
            for (std::size_t i = 0; i < bt.size(); ++i)
                bt[i] = gt * prefix[i] + tail * last[i];
            detail::accumulate_transition(k, msg.alpha[t], bt, 1.0, action_counts, out.composed);
        }
    }

    // Fold composed counts back onto the parameter groups.
    if (uses_factored_tables(s)) {
        out.counts.factored = out.composed;
    } else {
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            const auto& lay = k.policy().layouts[l];
            const bool top = l == s.top();
            for (std::size_t o = 0; o < lay.num_observations; ++o)
                for (std::size_t low = 0; low < lay.lower; ++low) {
                    if (!s.lower_at_end(low, l))
                        continue;
                    for (std::size_t cur = 0; cur < lay.self; ++cur)
                        for (std::size_t up = 0; up < lay.upper; ++up) {
                            auto src = out.composed[l].row(lay.row(o, low, cur, up));
                            auto dst = (!top && cur == s.end_nodes[l]) ? out.counts.descend[l].row(up)
                                                                       : out.counts.successor[l].row(o * lay.self + cur);
                            for (std::size_t c = 0; c < lay.self; ++c)
                                dst[c] += src[c];
                        }
                }
        }
        // The initial descent uses the descend tables once.
        if (!s.is_flat()) {
            const std::size_t nn = k.num_nodes();
            for (std::size_t n = 0; n < nn; ++n) {
                double post = 0.0;
                for (std::size_t st = 0; st < model.num_states(); ++st)
                    post += msg.alpha[0][st * nn + n] * msg.beta_bar[st * nn + n];
                if (post == 0.0)
                    continue;
                for (std::size_t l = 0; l + 1 < s.num_levels(); ++l)
                    out.counts.descend[l](s.digit(n, l + 1), s.digit(n, l)) += post;
            }
        }
    }

    detail::check_finite(out.counts.action, "action");
    for (std::size_t l = 0; l < out.counts.successor.size(); ++l)
        detail::check_finite(out.counts.successor[l], "successor[" + std::to_string(l) + "]");
    for (std::size_t l = 0; l < out.counts.descend.size(); ++l)
        detail::check_finite(out.counts.descend[l], "descend[" + std::to_string(l) + "]");
    for (std::size_t l = 0; l < out.counts.factored.size(); ++l)
        detail::check_finite(out.counts.factored[l], "factored[" + std::to_string(l) + "]");
    return out;
}

inline ExpectationTables e_step(const PomdpModel& model, const ControllerStructure& s, const ControllerParams& p,
                                const EmConfig& cfg) {
    return e_step(model, normalize_rewards(model), s, p, cfg);
}

namespace detail {

template <class RowFn>
void for_each_row(ControllerParams& p, const ControllerParams& e, RowFn&& fn) {
    auto table = [&](ConditionalTable& t, const ConditionalTable& et) {
        for (std::size_t r = 0; r < t.rows(); ++r)
            fn(t.row(r), et.row(r));
    };
    fn(std::span<double>(p.initial_top), std::span<const double>(e.initial_top));
    table(p.action, e.action);
    for (std::size_t l = 0; l < p.successor.size(); ++l)
        table(p.successor[l], e.successor[l]);
    for (std::size_t l = 0; l < p.descend.size(); ++l)
        table(p.descend[l], e.descend[l]);
    for (std::size_t l = 0; l < p.factored.size(); ++l)
        table(p.factored[l], e.factored[l]);
    for (std::size_t l = 0; l < p.initial_levels.size(); ++l)
        fn(std::span<double>(p.initial_levels[l]), std::span<const double>(e.initial_levels[l]));
}

} // namespace detail

/// Relative-frequency update; rows without mass keep their previous values.
inline ControllerParams m_step_standard(const ExpectationTables& e, const ControllerParams& old) {
    ControllerParams p = old;
    detail::for_each_row(p, e.counts, [](std::span<double> row, std::span<const double> ex) {
        double total = 0.0;
        for (double x : ex)
            total += x;
        if (!(total > 0.0))
            return;
        for (std::size_t v = 0; v < row.size(); ++v)
            row[v] = ex[v] / total;
    });
    return p;
}

/**
 * Softened greedy update: f_v = E_v / p_v, v* = argmax f (lowest index on
 * ties, entries with p_v = 0 excluded) and p_v ∝ p_v (δ_{v v*} + c + ε_v).
 */
inline ControllerParams m_step_greedy_soft(const ExpectationTables& e, const ControllerParams& old,
                                           const EmConfig& cfg, RandomSource& rng) {
    ControllerParams p = old;
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
    std::vector<double> next;
    detail::for_each_row(p, e.counts, [&](std::span<double> row, std::span<const double> ex) {
        std::optional<std::size_t> best;
        double best_f = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) {
            if (!(row[v] > 0.0))
                continue;
            const double f = ex[v] / row[v];
            if (f > best_f) {
                best_f = f;
                best = v;
            }
        }
        if (!best)
            return;
        const double row_eps = (cfg.noise_sigma > 0.0 && !cfg.per_entry_noise) ? noise(rng) : 0.0;
        next.assign(row.size(), 0.0);
        double z = 0.0;
        for (std::size_t v = 0; v < row.size(); ++v) {
            if (!(row[v] > 0.0))
                continue;
            double eps = row_eps;
            if (cfg.noise_sigma > 0.0 && cfg.per_entry_noise)
                eps = noise(rng);
            const double bracket = std::max(0.0, (v == *best ? 1.0 : 0.0) + cfg.softening + eps);
            next[v] = row[v] * bracket;
            z += next[v];
        }
        if (!(z > 0.0) || !std::isfinite(z))
            return;
        for (std::size_t v = 0; v < row.size(); ++v)
            row[v] = next[v] / z;
    });
    return p;
}

struct EmResult {
    ControllerParams params;            ///< best-likelihood iterate
    double initial_likelihood = 0.0;
    std::vector<double> likelihood_trace; ///< likelihood after each iteration
    std::vector<double> value_trace;      ///< exact value after each iteration (optional)
    std::size_t best_iteration = 0;       ///< 0 = initialization, i = after iteration i
    double best_likelihood = 0.0;
    double value = NAN;                   ///< exact value of `params`
    double likelihood_value = NAN;        ///< value recovered from best_likelihood
    double wall_ms = 0.0;
    std::uint64_t seed = 0;
    std::size_t iterations_run() const { return likelihood_trace.size(); }
};

inline double exact_value(const PomdpModel& model, const ControllerStructure& s, const ControllerParams& p) {
    return evaluate_exact(model, s, p);
}

inline EmResult run_em(const PomdpModel& model, const ControllerStructure& s, const EmConfig& cfg,
                       std::uint64_t seed) {
    cfg.validate();
    model.validate();
    s.validate();
    const auto reward = normalize_rewards(model);
    RandomSource rng(seed);
    const auto start = std::chrono::steady_clock::now();

    EmResult res;
    res.seed = seed;
    auto params = init_params(s, model.num_actions(), model.num_observations(), cfg, rng);
    auto e = e_step(model, reward, s, params, cfg);
    res.initial_likelihood = e.likelihood;
    res.best_likelihood = e.likelihood;
    res.params = params;
    double prev = e.likelihood;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        params = cfg.m_step == MStep::standard ? m_step_standard(e, params)
                                               : m_step_greedy_soft(e, params, cfg, rng);
        e = e_step(model, reward, s, params, cfg);
        res.likelihood_trace.push_back(e.likelihood);
        if (cfg.track_exact_value)
            res.value_trace.push_back(exact_value(model, s, params));
        if (e.likelihood > res.best_likelihood) {
            res.best_likelihood = e.likelihood;
            res.best_iteration = it;
            res.params = params;
        }
        if (cfg.convergence_epsilon > 0.0 && std::abs(e.likelihood - prev) < cfg.convergence_epsilon)
            break;
        prev = e.likelihood;
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    res.likelihood_value = value_from_likelihood(res.best_likelihood, reward.r_min, reward.r_max, model.discount());
    res.value = exact_value(model, s, res.params);
    return res;
}

inline EmResult run_em(const PomdpModel& model, const ControllerStructure& s, const EmConfig& cfg) {
    return run_em(model, s, cfg, cfg.seed);
}

struct RestartSummary {
    std::vector<EmResult> runs; ///< ordered by seed
    std::size_t best = 0;       ///< index of the run with the highest exact value
    double mean_value = 0.0;
    double std_value = 0.0;     ///< sample standard deviation (0 for one run)
    double mean_wall_ms = 0.0;
    double std_wall_ms = 0.0;

    const EmResult& best_run() const { return runs.at(best); }
};

inline std::pair<double, double> mean_and_std(const std::vector<double>& xs) {
    if (xs.empty())
        return {NAN, NAN};
    double mean = 0.0;
    for (double x : xs)
        mean += x;
    mean /= static_cast<double>(xs.size());
    if (xs.size() < 2)
        return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs)
        ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

/// Runs seeds cfg.seed, cfg.seed + 1, ... (concurrently) and picks the best by exact value.
inline RestartSummary multi_restart(const PomdpModel& model, const ControllerStructure& s, const EmConfig& cfg) {
    cfg.validate();
    RestartSummary out;
    out.runs.resize(cfg.restarts);
    std::size_t workers = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, cfg.restarts);
    if (workers <= 1) {
        for (std::size_t i = 0; i < cfg.restarts; ++i)
            out.runs[i] = run_em(model, s, cfg, cfg.seed + i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::future<void>> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.push_back(std::async(std::launch::async, [&] {
                for (std::size_t i; (i = next.fetch_add(1)) < cfg.restarts;)
                    out.runs[i] = run_em(model, s, cfg, cfg.seed + i);
            }));
        for (auto& f : pool)
            f.get();
    }
    std::vector<double> values, walls;
    for (std::size_t i = 0; i < out.runs.size(); ++i) {
        values.push_back(out.runs[i].value);
        walls.push_back(out.runs[i].wall_ms);
        if (out.runs[i].value > out.runs[out.best].value)
            out.best = i;
    }
    std::tie(out.mean_value, out.std_value) = mean_and_std(values);
    std::tie(out.mean_wall_ms, out.std_wall_ms) = mean_and_std(walls);
    return out;
}

} // namespace hfsc
