// Learns a factored (10,3) controller for the chain-of-chains problem and
// prints its value next to the hand-coded optimum.
#include <iostream>

#include "hfsc/hfsc.hpp"

int main() {
    using namespace hfsc;
    const auto model = make_chain_of_chains(3, 100.0, 0.95);

    EmConfig cfg;
    cfg.iterations = 200;
    const auto structure = ControllerStructure::factored({10, 3});
    const auto res = run_em(model, structure, cfg, 1);

    std::cout << "learned value  " << res.value << " (best iterate " << res.best_iteration << ", "
              << res.wall_ms << " ms)\n";
    std::cout << "from likelihood " << res.likelihood_value << '\n';

    // The optimal flat controller walks the chain with one node per position.
    const std::size_t n = 10;
    auto flat = ControllerStructure::flat(n);
    auto p = make_param_shape(flat, model.num_actions(), model.num_observations());
    for (std::size_t k = 0; k < n; ++k) {
        p.action(k, k < 9 ? k % 3 : 3) = 1.0;
        p.successor[0](k, (k + 1) % n) = 1.0;
    }
    std::cout << "optimal value  " << evaluate_exact(model, flat, p) << '\n';
    std::cout << controller_graph(structure, res.params, model, 0.5);
}
