#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hfsc {

/// Tolerance used when checking that a row is a probability vector.
inline constexpr double kStochasticTolerance = 1e-9;

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by belief_update when Pr(o | a, b) is zero.
class ImpossibleObservation : public std::runtime_error {
public:
    ImpossibleObservation(std::size_t action, std::size_t observation)
        : std::runtime_error("observation " + std::to_string(observation) +
                             " has zero probability after action " + std::to_string(action)),
          action(action), observation(observation) {}

    std::size_t action;
    std::size_t observation;
};

namespace detail {

inline bool is_probability_vector(std::span<const double> row, double tol = kStochasticTolerance) {
    double sum = 0.0;
    for (double p : row) {
        if (!(p >= 0.0) || !std::isfinite(p))
            return false;
        sum += p;
    }
    return std::abs(sum - 1.0) <= tol;
}

} // namespace detail

/**
 * A finite POMDP with rewards r(a, s) and discount in [0, 1).
 *
 * Tables are stored densely, row-major:
 *   transition  (a, s)  -> distribution over s'
 *   observation (a, s') -> distribution over o'
 *   reward      (a, s)
 * Names are optional; when empty the canonical writer falls back to counts.
 */
class PomdpModel {
public:
    PomdpModel() = default;

    PomdpModel(std::size_t num_states, std::size_t num_actions, std::size_t num_observations,
               double discount = 0.95)
        : num_states_(num_states), num_actions_(num_actions), num_observations_(num_observations),
          discount_(discount), initial_(num_states, 0.0),
          transition_(num_actions * num_states * num_states, 0.0),
          observation_(num_actions * num_states * num_observations, 0.0),
          reward_(num_actions * num_states, 0.0) {}

    std::size_t num_states() const { return num_states_; }
    std::size_t num_actions() const { return num_actions_; }
    std::size_t num_observations() const { return num_observations_; }
    double discount() const { return discount_; }
    void set_discount(double g) { discount_ = g; }

    std::span<const double> initial_belief() const { return initial_; }
    std::span<double> initial_belief() { return initial_; }

    /// Distribution over next states for (a, s).
    std::span<const double> transition(std::size_t a, std::size_t s) const {
        return {transition_.data() + (a * num_states_ + s) * num_states_, num_states_};
    }
    std::span<double> transition(std::size_t a, std::size_t s) {
        return {transition_.data() + (a * num_states_ + s) * num_states_, num_states_};
    }
    double transition(std::size_t a, std::size_t s, std::size_t next) const {
        return transition_[(a * num_states_ + s) * num_states_ + next];
    }

    /// Distribution over observations given the next state s' reached by action a.
    std::span<const double> observation(std::size_t next, std::size_t a) const {
        return {observation_.data() + (a * num_states_ + next) * num_observations_, num_observations_};
    }
    std::span<double> observation(std::size_t next, std::size_t a) {
        return {observation_.data() + (a * num_states_ + next) * num_observations_, num_observations_};
    }
    double observation(std::size_t next, std::size_t a, std::size_t o) const {
        return observation_[(a * num_states_ + next) * num_observations_ + o];
    }

    double reward(std::size_t a, std::size_t s) const { return reward_[a * num_states_ + s]; }
    double& reward(std::size_t a, std::size_t s) { return reward_[a * num_states_ + s]; }

    std::vector<std::string>& state_names() { return state_names_; }
    std::vector<std::string>& action_names() { return action_names_; }
    std::vector<std::string>& observation_names() { return observation_names_; }
    const std::vector<std::string>& state_names() const { return state_names_; }
    const std::vector<std::string>& action_names() const { return action_names_; }
    const std::vector<std::string>& observation_names() const { return observation_names_; }

    std::string action_label(std::size_t a) const {
        return a < action_names_.size() ? action_names_[a] : std::to_string(a);
    }
    std::string observation_label(std::size_t o) const {
        return o < observation_names_.size() ? observation_names_[o] : std::to_string(o);
    }

    /// Throws ModelError describing the first violated invariant.
    void validate() const {
        if (num_states_ == 0 || num_actions_ == 0 || num_observations_ == 0)
            throw ModelError("state, action and observation sets must be non-empty");
        if (!(discount_ >= 0.0 && discount_ < 1.0))
            throw ModelError("discount must lie in [0, 1), got " + std::to_string(discount_));
        if (!detail::is_probability_vector(initial_))
            throw ModelError("initial belief is not a probability vector");
        for (std::size_t a = 0; a < num_actions_; ++a)
            for (std::size_t s = 0; s < num_states_; ++s)
                if (!detail::is_probability_vector(transition(a, s)))
                    throw ModelError("transition row for (action " + action_label(a) + ", state " +
                                     state_label(s) + ") is not stochastic");
        for (std::size_t a = 0; a < num_actions_; ++a)
            for (std::size_t s = 0; s < num_states_; ++s)
                if (!detail::is_probability_vector(observation(s, a)))
                    throw ModelError("observation row for (action " + action_label(a) +
                                     ", next state " + state_label(s) + ") is not stochastic");
        for (double r : reward_)
            if (!std::isfinite(r))
                throw ModelError("reward table contains a non-finite entry");
    }

    std::string state_label(std::size_t s) const {
        return s < state_names_.size() ? state_names_[s] : std::to_string(s);
    }

    friend bool operator==(const PomdpModel&, const PomdpModel&) = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t num_observations_ = 0;
    double discount_ = 0.95;
    std::vector<double> initial_;
    std::vector<double> transition_;
    std::vector<double> observation_;
    std::vector<double> reward_;
    std::vector<std::string> state_names_;
    std::vector<std::string> action_names_;
    std::vector<std::string> observation_names_;
};

/// Largest absolute difference between corresponding tables of two equally sized models.
inline double max_table_difference(const PomdpModel& x, const PomdpModel& y) {
    if (x.num_states() != y.num_states() || x.num_actions() != y.num_actions() ||
        x.num_observations() != y.num_observations())
        return INFINITY;
    double d = std::abs(x.discount() - y.discount());
    for (std::size_t s = 0; s < x.num_states(); ++s)
        d = std::max(d, std::abs(x.initial_belief()[s] - y.initial_belief()[s]));
    for (std::size_t a = 0; a < x.num_actions(); ++a)
        for (std::size_t s = 0; s < x.num_states(); ++s) {
            d = std::max(d, std::abs(x.reward(a, s) - y.reward(a, s)));
            for (std::size_t t = 0; t < x.num_states(); ++t)
                d = std::max(d, std::abs(x.transition(a, s, t) - y.transition(a, s, t)));
            for (std::size_t o = 0; o < x.num_observations(); ++o)
                d = std::max(d, std::abs(x.observation(s, a, o) - y.observation(s, a, o)));
        }
    return d;
}

using Belief = std::vector<double>;

/// Bayes filter: b'(s') ∝ Σ_s b(s) T(s'|a,s) Z(o|s',a).
inline Belief belief_update(const PomdpModel& model, std::span<const double> b, std::size_t a,
                            std::size_t o) {
    const std::size_t n = model.num_states();
    if (b.size() != n)
        throw std::invalid_argument("belief has wrong dimension");
    if (a >= model.num_actions() || o >= model.num_observations())
        throw std::out_of_range("action or observation index out of range");
    Belief next(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        if (b[s] == 0.0)
            continue;
        auto row = model.transition(a, s);
        for (std::size_t t = 0; t < n; ++t)
            next[t] += b[s] * row[t];
    }
    double norm = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        next[t] *= model.observation(t, a, o);
        norm += next[t];
    }
    if (!(norm > 0.0))
        throw ImpossibleObservation(a, o);
    for (double& p : next)
        p /= norm;
    return next;
}

/// Rewards affinely mapped to [0, 1]; entries are Pr(R̃ = 1 | a, s).
struct NormalizedReward {
    double r_min = 0.0;
    double r_max = 0.0;
    std::size_t num_states = 0;
    std::vector<double> table; // (a, s)

    double operator()(std::size_t a, std::size_t s) const { return table[a * num_states + s]; }
    bool degenerate() const { return !(r_max > r_min); }

    /// Inverse of the normalization (non-degenerate case).
    double denormalize(double x) const { return x * (r_max - r_min) + r_min; }
};

inline NormalizedReward normalize_rewards(const PomdpModel& model) {
    NormalizedReward out;
    out.num_states = model.num_states();
    out.r_min = INFINITY;
    out.r_max = -INFINITY;
    for (std::size_t a = 0; a < model.num_actions(); ++a)
        for (std::size_t s = 0; s < model.num_states(); ++s) {
            out.r_min = std::min(out.r_min, model.reward(a, s));
            out.r_max = std::max(out.r_max, model.reward(a, s));
        }
    out.table.resize(model.num_actions() * model.num_states());
    const double span = out.r_max - out.r_min;
    for (std::size_t a = 0; a < model.num_actions(); ++a)
        for (std::size_t s = 0; s < model.num_states(); ++s) {
            double& x = out.table[a * model.num_states() + s];
            if (!(span > 0.0)) {
                x = 0.5;
            } else if (model.reward(a, s) == out.r_min) {
                x = 0.0;
            } else if (model.reward(a, s) == out.r_max) {
                x = 1.0;
            } else {
                x = std::clamp((model.reward(a, s) - out.r_min) / span, 0.0, 1.0);
            }
        }
    return out;
}

/**
 * Mixture weights Pr(T = t) = (1 - γ) γ^t for t < t_max. The last entry takes
 * the whole tail γ^t_max, so the vector sums to one.
 */
inline std::vector<double> time_prior(double discount, std::size_t t_max) {
    if (!(discount >= 0.0 && discount < 1.0))
        throw std::invalid_argument("discount must lie in [0, 1)");
    std::vector<double> p(t_max + 1);
    double g = 1.0; // γ^t
    for (std::size_t t = 0; t < t_max; ++t) {
        p[t] = (1.0 - discount) * g;
        g *= discount;
    }
    p[t_max] = g;
    return p;
}

/// Upper bound on the value error caused by truncating the time mixture at t_max.
inline double truncation_bound(double discount, std::size_t t_max, double r_min, double r_max) {
    return std::pow(discount, static_cast<double>(t_max)) * (r_max - r_min) / (1.0 - discount);
}

} // namespace hfsc
