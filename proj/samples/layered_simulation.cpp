// Runs a random hierarchical controller on the paint problem, both layered and
// flattened, and checks that the two produce the same trajectory.
#include <iostream>

#include "hfsc/hfsc.hpp"

int main(int argc, char** argv) {
    using namespace hfsc;
    const std::string path = argc > 1 ? argv[1] : "data/problems/paint.95.POMDP";
    const auto model = load_pomdp(path);

    RandomSource init(3);
    const auto s = ControllerStructure::hierarchical({4, 3});
    const auto params = random_params(s, model.num_actions(), model.num_observations(), init, true);
    const auto layered = compose(s, params, model.num_actions(), model.num_observations());
    const auto flat = flatten(layered);

    RandomSource r1(42), r2(42);
    const auto a = sample_trajectory(model, layered, 1000, r1);
    const auto b = sample_trajectory(model, flat, 1000, r2);
    std::cout << "identical trajectories: " << std::boolalpha << (a == b) << '\n';
    std::cout << "return of the sample:   " << discounted_return(a, model.discount()) << '\n';
    std::cout << "exact value:            " << evaluate_exact(model, flat).value << '\n';
}
