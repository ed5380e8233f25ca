#pragma once

#include <ostream>
#include <vector>

#include "kernel.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

/// Entries below this magnitude are flushed to zero after every kernel application.
inline constexpr double kMessageFloor = 1e-300;

/**
 * Forward/backward messages of the time mixture, all over (n, s) in the
 * kernel's state-major layout.
 *   alpha[t](n,s) = Pr(N_t = n, S_t = s)
 *   beta[τ](n,s)  = Pr(R̃ = 1 | N_{T-τ} = n, S_{T-τ} = s, T)
 */
struct MessageSet {
    std::vector<std::vector<double>> alpha;
    std::vector<std::vector<double>> beta;
    std::vector<double> alpha_bar;
    std::vector<double> beta_bar;
    double likelihood = 0.0;
};

namespace detail {

inline void flush_small(std::vector<double>& v) {
    for (double& x : v)
        if (std::abs(x) < kMessageFloor)
            x = 0.0;
}

} // namespace detail

/// α^0 = p_n p_s in the kernel's layout.
inline std::vector<double> initial_alpha(const TwoSliceKernel& k) {
    const auto& init_n = k.policy().initial;
    const auto init_s = k.model().initial_belief();
    std::vector<double> a(k.size());
    for (std::size_t s = 0; s < k.num_states(); ++s)
        for (std::size_t n = 0; n < k.num_nodes(); ++n)
            a[s * k.num_nodes() + n] = init_s[s] * init_n[n];
    return a;
}

/// β^0(n,s) = Σ_a p(a|n^0) r̃(a,s).
inline std::vector<double> terminal_beta(const TwoSliceKernel& k, const NormalizedReward& reward) {
    std::vector<double> b(k.size(), 0.0);
    const std::size_t na = k.model().num_actions();
    for (std::size_t s = 0; s < k.num_states(); ++s)
        for (std::size_t n = 0; n < k.num_nodes(); ++n) {
            double v = 0.0;
            for (std::size_t a = 0; a < na; ++a)
                v += k.action_prob(n, a) * reward(a, s);
            b[s * k.num_nodes() + n] = v;
        }
    return b;
}

inline std::vector<std::vector<double>> forward(const TwoSliceKernel& k, std::vector<double> alpha0,
                                                std::size_t t_max) {
    if (alpha0.size() != k.size())
        throw std::invalid_argument("initial distribution has wrong size");
    std::vector<std::vector<double>> alpha;
    alpha.reserve(t_max + 1);
    alpha.push_back(std::move(alpha0));
    for (std::size_t t = 1; t <= t_max; ++t) {
        std::vector<double> next(k.size());
        k.apply(alpha.back(), next);
        detail::flush_small(next);
        alpha.push_back(std::move(next));
    }
    return alpha;
}

inline std::vector<std::vector<double>> backward(const TwoSliceKernel& k, std::vector<double> beta0,
                                                 std::size_t t_max) {
    if (beta0.size() != k.size())
        throw std::invalid_argument("terminal message has wrong size");
    std::vector<std::vector<double>> beta;
    beta.reserve(t_max + 1);
    beta.push_back(std::move(beta0));
    for (std::size_t t = 1; t <= t_max; ++t) {
        std::vector<double> next(k.size());
        k.apply_transpose(beta.back(), next);
        detail::flush_small(next);
        beta.push_back(std::move(next));
    }
    return beta;
}

inline std::vector<std::vector<double>> backward(const TwoSliceKernel& k, const NormalizedReward& reward,
                                                 std::size_t t_max) {
    return backward(k, terminal_beta(k, reward), t_max);
}

/// Time-prior weighted sums of the message sequences and Pr(R̃ = 1) = Σ α^0 β̄.
inline MessageSet collapse(std::vector<std::vector<double>> alpha, std::vector<std::vector<double>> beta,
                           std::span<const double> prior) {
    if (alpha.size() != beta.size() || alpha.size() != prior.size() || alpha.empty())
        throw std::invalid_argument("collapse needs alpha, beta and prior of equal length");
    MessageSet m;
    const std::size_t dim = alpha.front().size();
    m.alpha_bar.assign(dim, 0.0);
    m.beta_bar.assign(dim, 0.0);
    for (std::size_t t = 0; t < prior.size(); ++t)
        for (std::size_t i = 0; i < dim; ++i) {
            m.alpha_bar[i] += prior[t] * alpha[t][i];
            m.beta_bar[i] += prior[t] * beta[t][i];
        }
    for (std::size_t i = 0; i < dim; ++i)
        m.likelihood += alpha.front()[i] * m.beta_bar[i];
    m.alpha = std::move(alpha);
    m.beta = std::move(beta);
    return m;
}

/// The same likelihood contracted on the forward side: Σ_t p_t Σ α^t β^0.
inline double forward_weighted_likelihood(const MessageSet& m, std::span<const double> prior) {
    double l = 0.0;
    for (std::size_t t = 0; t < prior.size(); ++t) {
        double inner = 0.0;
        for (std::size_t i = 0; i < m.alpha[t].size(); ++i)
            inner += m.alpha[t][i] * m.beta.front()[i];
        l += prior[t] * inner;
    }
    return l;
}

/**
 * Discounted value from the reward likelihood:
 *   V = [L (r_max - r_min) + r_min] / (1 - γ).
 */
inline double value_from_likelihood(double likelihood, double r_min, double r_max, double discount) {
    if (!(r_max > r_min))
        return r_min / (1.0 - discount);
    return (likelihood * (r_max - r_min) + r_min) / (1.0 - discount);
}

/// Runs forward, backward and collapse for one controller.
inline MessageSet infer(const TwoSliceKernel& k, const NormalizedReward& reward, std::size_t t_max) {
    const auto prior = time_prior(k.model().discount(), t_max);
    return collapse(forward(k, initial_alpha(k), t_max), backward(k, reward, t_max), prior);
}

inline double likelihood(const PomdpModel& model, const ControllerStructure& s, const ControllerParams& p,
                         std::size_t t_max) {
    auto k = build_kernel(model, s, p);
    return infer(k, normalize_rewards(model), t_max).likelihood;
}

/// Plain-text dump of the message tables for fixtures and debugging.
inline void dump_messages(std::ostream& out, const MessageSet& m, std::size_t num_nodes) {
    auto table = [&](const char* name, std::size_t t, const std::vector<double>& v) {
        out << name << ' ' << t << '\n';
        for (std::size_t i = 0; i < v.size(); ++i)
            out << (i % num_nodes ? " " : "") << v[i] << ((i + 1) % num_nodes ? "" : "\n");
    };
    out << "likelihood " << m.likelihood << '\n';
    for (std::size_t t = 0; t < m.alpha.size(); ++t)
        table("alpha", t, m.alpha[t]);
    for (std::size_t t = 0; t < m.beta.size(); ++t)
        table("beta", t, m.beta[t]);
}

} // namespace hfsc
