#pragma once

#include <functional>
#include <vector>

#include "hfsc/hfsc.hpp"

namespace hfsc::testing {

inline void random_row(std::span<double> row, RandomSource& rng, double sparsity = 0.0) {
    double z = 0.0;
    for (double& x : row) {
        x = uniform01(rng) < sparsity ? 0.0 : uniform01(rng) + 0.05;
        z += x;
    }
    if (z == 0.0) {
        row[0] = z = 1.0;
    }
    for (double& x : row)
        x /= z;
}

inline PomdpModel random_model(std::size_t S, std::size_t A, std::size_t O, double discount, RandomSource& rng,
                               double sparsity = 0.0, double reward_scale = 10.0) {
    PomdpModel m(S, A, O, discount);
    random_row(m.initial_belief(), rng);
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t s = 0; s < S; ++s) {
            random_row(m.transition(a, s), rng, sparsity);
            m.reward(a, s) = (uniform01(rng) - 0.5) * reward_scale;
        }
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
            random_row(m.observation(s, a), rng, sparsity);
    m.validate();
    return m;
}

/// Dense K[(n',s'), (n,s)] built entry by entry from the composed level tables.
inline std::vector<double> dense_kernel(const PomdpModel& m, const LayeredPolicy& pol) {
    const std::size_t ns = m.num_states(), nn = pol.joint_size(), dim = ns * nn;
    const auto& st = pol.structure;
    std::vector<double> k(dim * dim, 0.0);
    for (std::size_t n = 0; n < nn; ++n)
        for (std::size_t n2 = 0; n2 < nn; ++n2)
            for (std::size_t o = 0; o < m.num_observations(); ++o) {
                double pn = 1.0;
                for (std::size_t l = 0; l < st.num_levels(); ++l) {
                    const auto& lay = pol.layouts[l];
                    const std::size_t up = l + 1 < st.num_levels() ? st.digit(n2, l + 1) : 0;
                    pn *= pol.levels[l](lay.row(o, n % lay.lower, st.digit(n, l), up), st.digit(n2, l));
                }
                if (pn == 0.0)
                    continue;
                for (std::size_t s = 0; s < ns; ++s)
                    for (std::size_t s2 = 0; s2 < ns; ++s2)
                        for (std::size_t a = 0; a < m.num_actions(); ++a)
                            k[(s2 * nn + n2) * dim + s * nn + n] += pol.action(n % st.size(0), a) *
                                                                    m.transition(a, s, s2) *
                                                                    m.observation(s2, a, o) * pn;
            }
    return k;
}

inline std::vector<double> dense_apply(const std::vector<double>& k, const std::vector<double>& x) {
    const std::size_t dim = x.size();
    std::vector<double> y(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            y[i] += k[i * dim + j] * x[j];
    return y;
}

inline std::vector<double> dense_apply_transpose(const std::vector<double>& k, const std::vector<double>& x) {
    const std::size_t dim = x.size();
    std::vector<double> y(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            y[j] += k[i * dim + j] * x[i];
    return y;
}

/**
 * Visits every trajectory n0 s0 a0 (s1 o1 n1 a1) ... up to step T with its
 * probability. The callback receives the step list and the probability.
 */
struct Step {
    std::size_t node, state, action;
    std::size_t observation; // the one that led here; 0 at the first step
};

inline void enumerate_paths(const PomdpModel& m, const FlatController& fc, std::size_t T,
                            const std::function<void(const std::vector<Step>&, double)>& visit) {
    std::vector<Step> path;
    std::function<void(std::size_t, std::size_t, std::size_t, double)> rec = [&](std::size_t n, std::size_t s,
                                                                                  std::size_t in, double p) {
        for (std::size_t a = 0; a < m.num_actions(); ++a) {
            const double pa = p * fc.action(n, a);
            if (pa == 0.0)
                continue;
            path.push_back({n, s, a, in});
            if (path.size() == T + 1) {
                visit(path, pa);
            } else {
                for (std::size_t s2 = 0; s2 < m.num_states(); ++s2) {
                    const double pt = pa * m.transition(a, s, s2);
                    if (pt == 0.0)
                        continue;
                    for (std::size_t o = 0; o < m.num_observations(); ++o) {
                        const double po = pt * m.observation(s2, a, o);
                        if (po == 0.0)
                            continue;
                        for (std::size_t n2 = 0; n2 < fc.num_nodes; ++n2)
                            if (double pn = po * fc.next(n, o)[n2]; pn != 0.0)
                                rec(n2, s2, o, pn);
                    }
                }
            }
            path.pop_back();
        }
    };
    for (std::size_t n = 0; n < fc.num_nodes; ++n)
        for (std::size_t s = 0; s < m.num_states(); ++s)
            if (double p = fc.initial[n] * m.initial_belief()[s]; p != 0.0)
                rec(n, s, 0, p);
}

/// Σ_T q_T Σ_paths Pr(path) r̃(a_T, s_T) by brute force.
inline double enumerate_likelihood(const PomdpModel& m, const FlatController& fc, std::size_t t_max) {
    const auto q = time_prior(m.discount(), t_max);
    const auto r = normalize_rewards(m);
    double total = 0.0;
    for (std::size_t T = 0; T <= t_max; ++T)
        enumerate_paths(m, fc, T, [&](const std::vector<Step>& path, double p) {
            total += q[T] * p * r(path.back().action, path.back().state);
        });
    return total;
}

inline FlatController random_flat_controller(std::size_t nodes, std::size_t A, std::size_t O, RandomSource& rng) {
    auto s = ControllerStructure::flat(nodes);
    return flatten(s, random_params(s, A, O, rng, true), A, O);
}

} // namespace hfsc::testing
