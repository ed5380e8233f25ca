#pragma once

#include <vector>

#include "controller.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

struct TrajectoryStep {
    std::size_t node;  // joint node index
    std::size_t state;
    std::size_t action;
    std::size_t observation;
    double reward;

    friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

namespace detail {

/**
 * Inverse-CDF draw that also rescales u to a fresh uniform inside the chosen
 * cell. Drawing the top level and then the levels below with the rescaled u
 * gives the same outcome as one draw over the top-major joint index.
 */
inline std::size_t draw(std::span<const double> p, double& u) {
    // rows may be unnormalized conditionals
    double total = 0.0;
    for (double x : p)
        total += x;
    const double target = u * total;
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0)
            continue;
        last = i;
        if (target < acc + p[i]) {
            u = std::clamp((target - acc) / p[i], 0.0, std::nextafter(1.0, 0.0));
            return i;
        }
        acc += p[i];
    }
    u = 0.5;
    return last;
}

inline std::size_t draw(std::span<const double> p, RandomSource& rng) {
    double u = uniform01(rng);
    return draw(p, u);
}

} // namespace detail

/**
 * Runs a layered controller for `horizon` steps. Each step consumes exactly
 * four uniforms: action, next state, observation, joint node update. The
 * initial node and state consume one each.
 */
inline std::vector<TrajectoryStep> sample_trajectory(const PomdpModel& model, const LayeredPolicy& pol,
                                                     std::size_t horizon, RandomSource& rng) {
    std::vector<TrajectoryStep> out;
    if (horizon == 0)
        return out;
    const auto& st = pol.structure;
    const std::size_t levels = st.num_levels();
    std::vector<std::size_t> digits(levels);

    auto sample_initial = [&] {
        double u = uniform01(rng);
        // Top from initial_top, then each level from its descend row (or own initial row).
        std::vector<double> top_row(st.size(st.top()), 0.0);
        for (std::size_t n = 0; n < pol.initial.size(); ++n)
            top_row[st.digit(n, st.top())] += pol.initial[n];
        digits[st.top()] = detail::draw(top_row, u);
        for (std::size_t l = st.top(); l-- > 0;) {
            // Conditional of level l given the already drawn levels above.
            std::vector<double> row(st.size(l), 0.0);
            for (std::size_t n = 0; n < pol.initial.size(); ++n) {
                bool match = true;
                for (std::size_t k = l + 1; k < levels && match; ++k)
                    match = st.digit(n, k) == digits[k];
                if (match)
                    row[st.digit(n, l)] += pol.initial[n];
            }
            digits[l] = detail::draw(row, u);
        }
    };
    auto joint = [&] {
        std::size_t n = 0;
        for (std::size_t l = levels; l-- > 0;)
            n = n * st.size(l) + digits[l];
        return n;
    };

    sample_initial();
    std::size_t state = detail::draw(model.initial_belief(), rng);
    out.reserve(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        const std::size_t node = joint();
        const std::size_t a = detail::draw(pol.action.row(digits[0]), rng);
        const double r = model.reward(a, state);
        const std::size_t next = detail::draw(model.transition(a, state), rng);
        const std::size_t o = detail::draw(model.observation(next, a), rng);
        out.push_back({node, state, a, o, r});

        double u = uniform01(rng);
        std::vector<std::size_t> nd(levels);
        for (std::size_t l = levels; l-- > 0;) {
            const auto& lay = pol.layouts[l];
            const std::size_t low = node % lay.lower;
            const std::size_t up = l + 1 < levels ? nd[l + 1] : 0;
            nd[l] = detail::draw(pol.levels[l].row(lay.row(o, low, digits[l], up)), u);
        }
        digits = nd;
        state = next;
    }
    return out;
}

inline std::vector<TrajectoryStep> sample_trajectory(const PomdpModel& model, const ControllerStructure& s,
                                                     const ControllerParams& p, std::size_t horizon,
                                                     RandomSource& rng) {
    return sample_trajectory(model, compose(s, p, model.num_actions(), model.num_observations()), horizon, rng);
}

/// Same step protocol as the layered sampler, over a flat controller.
inline std::vector<TrajectoryStep> sample_trajectory(const PomdpModel& model, const FlatController& fc,
                                                     std::size_t horizon, RandomSource& rng) {
    std::vector<TrajectoryStep> out;
    if (horizon == 0)
        return out;
    std::size_t node = detail::draw(fc.initial, rng);
    std::size_t state = detail::draw(model.initial_belief(), rng);
    out.reserve(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        const std::size_t a = detail::draw(fc.action.row(node), rng);
        const double r = model.reward(a, state);
        const std::size_t next = detail::draw(model.transition(a, state), rng);
        const std::size_t o = detail::draw(model.observation(next, a), rng);
        out.push_back({node, state, a, o, r});
        node = detail::draw(fc.next(node, o), rng);
        state = next;
    }
    return out;
}

/// Discounted return of one trajectory.
inline double discounted_return(const std::vector<TrajectoryStep>& traj, double discount) {
    double g = 1.0, total = 0.0;
    for (const auto& step : traj) {
        total += g * step.reward;
        g *= discount;
    }
    return total;
}

} // namespace hfsc
