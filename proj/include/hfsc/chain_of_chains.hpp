#pragma once

#include <string>

#include "pomdp_model.hpp"

namespace hfsc {

/**
 * Chain-of-chains benchmark.
 *
 * State k in [0, n^2] counts how many correct actions have been taken since the
 * last reset; state 0 doubles as the start anchor. At state k < n^2 the correct
 * action is chain action k mod n, which advances to k + 1. At state n^2 the
 * correct action is submit (index n), which pays `reward_magnitude` and returns
 * to state 0. Any other action returns to state 0 with zero reward. There is a
 * single, uninformative observation, so the controller must count.
 */
inline PomdpModel make_chain_of_chains(std::size_t n, double reward_magnitude, double discount) {
    if (n < 2)
        throw std::invalid_argument("chain-of-chains needs n >= 2");
    if (!(discount > 0.0 && discount < 1.0))
        throw std::invalid_argument("chain-of-chains discount must lie in (0, 1)");
    const std::size_t num_states = n * n + 1;
    const std::size_t submit = n;
    PomdpModel m(num_states, n + 1, 1, discount);
    for (std::size_t s = 0; s < num_states; ++s)
        m.state_names().push_back("p" + std::to_string(s));
    for (std::size_t a = 0; a < n; ++a)
        m.action_names().push_back(a < 26 ? std::string(1, static_cast<char>('A' + a)) : "a" + std::to_string(a));
    m.action_names().push_back("submit");
    m.observation_names().push_back("none");
    m.initial_belief()[0] = 1.0;

    const std::size_t last = n * n;
    for (std::size_t a = 0; a <= n; ++a)
        for (std::size_t s = 0; s < num_states; ++s) {
            const bool correct = s < last ? a == s % n : a == submit;
            std::size_t next = 0;
            if (correct && s < last)
                next = s + 1;
            m.transition(a, s)[next] = 1.0;
            m.observation(s, a)[0] = 1.0;
            if (correct && s == last)
                m.reward(a, s) = reward_magnitude;
        }
    m.validate();
    return m;
}

} // namespace hfsc
