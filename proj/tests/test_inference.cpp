#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"

using namespace hfsc;
using namespace hfsc::testing;

namespace {

struct Instance {
    PomdpModel model;
    ControllerStructure structure;
    ControllerParams params;
};

Instance random_instance(RandomSource& rng, std::size_t S, std::size_t A, std::size_t O, ControllerStructure s,
                         double discount = 0.9) {
    auto m = random_model(S, A, O, discount, rng, 0.2);
    auto p = random_params(s, A, O, rng, true);
    return {std::move(m), std::move(s), std::move(p)};
}

std::vector<ControllerStructure> structures() {
    return {ControllerStructure::flat(2),          ControllerStructure::flat(4),
            ControllerStructure::hierarchical({3, 2}), ControllerStructure::factored({2, 3}),
            ControllerStructure::hierarchical({2, 2, 2}), ControllerStructure::factored({2, 2, 2})};
}

} // namespace

TEST(Kernel, MatchesDenseExpansion) {
    RandomSource rng(1);
    for (const auto& s : structures())
        for (int rep = 0; rep < 3; ++rep) {
            auto in = random_instance(rng, 3, 2, 2, s);
            auto k = build_kernel(in.model, s, in.params);
            auto dense = dense_kernel(in.model, k.policy());
            std::vector<double> x(k.size()), y(k.size());
            random_row(x, rng);
            k.apply(x, y);
            auto yd = dense_apply(dense, x);
            for (std::size_t i = 0; i < x.size(); ++i)
                EXPECT_NEAR(y[i], yd[i], 1e-12) << s.describe();
            for (double& v : x)
                v = uniform01(rng);
            k.apply_transpose(x, y);
            yd = dense_apply_transpose(dense, x);
            for (std::size_t i = 0; i < x.size(); ++i)
                EXPECT_NEAR(y[i], yd[i], 1e-12) << s.describe();
            // Column sums of the dense expansion.
            const std::size_t dim = k.size();
            for (std::size_t j = 0; j < dim; ++j) {
                double col = 0.0;
                for (std::size_t i = 0; i < dim; ++i)
                    col += dense[i * dim + j];
                EXPECT_NEAR(col, 1.0, 1e-12);
            }
        }
}

TEST(Kernel, FactorizesWithoutActionOrObservationCoupling) {
    RandomSource rng(2);
    auto m = random_model(3, 1, 1, 0.9, rng);
    auto s = ControllerStructure::flat(2);
    auto p = random_params(s, 1, 1, rng, true);
    auto k = build_kernel(m, s, p);
    auto dense = dense_kernel(m, k.policy());
    for (std::size_t s1 = 0; s1 < 3; ++s1)
        for (std::size_t n1 = 0; n1 < 2; ++n1)
            for (std::size_t s2 = 0; s2 < 3; ++s2)
                for (std::size_t n2 = 0; n2 < 2; ++n2)
                    EXPECT_NEAR(dense[(s2 * 2 + n2) * 6 + s1 * 2 + n1],
                                m.transition(0, s1, s2) * p.successor[0](n1, n2), 1e-15);
}

TEST(Kernel, OperationCountBelowDense) {
    RandomSource rng(3);
    for (std::size_t S : {4u, 6u, 10u}) {
        auto in = random_instance(rng, S, 3, 2, ControllerStructure::factored({5, 3}));
        auto k = build_kernel(in.model, in.structure, in.params);
        std::vector<double> x(k.size(), 1.0 / static_cast<double>(k.size())), y(k.size());
        k.reset_operation_count();
        k.apply(x, y);
        EXPECT_LT(k.operation_count(), k.dense_cost()) << S;
        EXPECT_LE(k.operation_count(), k.cost_estimate() * 2);
    }
}

TEST(Forward, IdentityKernelKeepsAlpha) {
    auto m = parse_pomdp(std::string("discount: 0.9\nstates: 3\nactions: 2\nobservations: 1\n"
                                     "start: 0.2 0.3 0.5\nT: * identity\nO: * : * : 0 1\n"));
    auto s = ControllerStructure::flat(2);
    auto p = make_param_shape(s, 2, 1);
    p.action(0, 0) = p.action(1, 1) = 1.0;
    p.successor[0](0, 0) = p.successor[0](1, 1) = 1.0;
    auto k = build_kernel(m, s, p);
    auto alpha = forward(k, initial_alpha(k), 5);
    for (const auto& a : alpha)
        EXPECT_EQ(a, alpha.front());
}

TEST(Forward, NormalizedAndMatchesPathSum) {
    RandomSource rng(4);
    auto in = random_instance(rng, 2, 2, 2, ControllerStructure::flat(2));
    auto k = build_kernel(in.model, in.structure, in.params);
    auto alpha = forward(k, initial_alpha(k), 3);
    for (const auto& a : alpha) {
        double sum = 0.0;
        for (double x : a)
            sum += x;
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    auto fc = flatten(in.structure, in.params, 2, 2);
    std::vector<double> oracle(4, 0.0);
    // α³ from every path of length 3 plus the fourth (node, state) pair.
    enumerate_paths(in.model, fc, 2, [&](const std::vector<Step>& path, double p) {
        const auto& last = path.back();
        for (std::size_t s2 = 0; s2 < 2; ++s2)
            for (std::size_t o = 0; o < 2; ++o)
                for (std::size_t n2 = 0; n2 < 2; ++n2)
                    oracle[s2 * 2 + n2] += p * in.model.transition(last.action, last.state, s2) *
                                           in.model.observation(s2, last.action, o) * fc.next(last.node, o)[n2];
    });
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(alpha[3][i], oracle[i], 1e-14);
}

TEST(Backward, ConstantRewards) {
    RandomSource rng(5);
    auto in = random_instance(rng, 3, 2, 2, ControllerStructure::hierarchical({2, 2}));
    auto k = build_kernel(in.model, in.structure, in.params);
    for (double c : {0.0, 1.0}) {
        auto beta = backward(k, std::vector<double>(k.size(), c), 10);
        for (const auto& b : beta)
            for (double x : b)
                EXPECT_NEAR(x, c, 1e-12);
    }
}

TEST(Collapse, SingleComponent) {
    RandomSource rng(6);
    auto in = random_instance(rng, 3, 2, 2, ControllerStructure::flat(3));
    auto k = build_kernel(in.model, in.structure, in.params);
    auto msg = infer(k, normalize_rewards(in.model), 0);
    EXPECT_EQ(msg.alpha_bar, msg.alpha[0]);
    double l = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i)
        l += msg.alpha[0][i] * msg.beta[0][i];
    EXPECT_NEAR(msg.likelihood, l, 1e-15);
}

TEST(Collapse, BothContractionsAgree) {
    RandomSource rng(7);
    for (const auto& s : structures()) {
        auto in = random_instance(rng, 4, 3, 2, s);
        auto k = build_kernel(in.model, s, in.params);
        const auto prior = time_prior(0.9, 60);
        auto msg = infer(k, normalize_rewards(in.model), 60);
        EXPECT_NEAR(msg.likelihood, forward_weighted_likelihood(msg, prior), 1e-10);
        EXPECT_GE(msg.likelihood, 0.0);
        EXPECT_LE(msg.likelihood, 1.0);
        for (const auto& b : msg.beta)
            for (double x : b) {
                EXPECT_GE(x, 0.0);
                EXPECT_LE(x, 1.0 + 1e-12);
            }
    }
}

TEST(Collapse, FluxInvariant) {
    RandomSource rng(8);
    for (const auto& s : structures()) {
        auto in = random_instance(rng, 3, 2, 3, s);
        auto k = build_kernel(in.model, s, in.params);
        auto msg = infer(k, normalize_rewards(in.model), 12);
        for (std::size_t t = 0; t <= 12; ++t) {
            double ref = 0.0;
            for (std::size_t i = 0; i < k.size(); ++i)
                ref += msg.alpha[0][i] * msg.beta[t][i];
            for (std::size_t j = 1; j <= t; ++j) {
                double f = 0.0;
                for (std::size_t i = 0; i < k.size(); ++i)
                    f += msg.alpha[j][i] * msg.beta[t - j][i];
                EXPECT_NEAR(f, ref, 1e-10);
            }
        }
    }
}

TEST(Collapse, MatchesFullEnumeration) {
    RandomSource rng(9);
    const std::vector<std::pair<ControllerStructure, std::size_t>> cases = {
        {ControllerStructure::flat(2), 3},           {ControllerStructure::flat(3), 4},
        {ControllerStructure::hierarchical({2, 2}), 3}, {ControllerStructure::factored({2, 2}), 3},
        {ControllerStructure::flat(1), 6}};
    for (const auto& [s, S] : cases)
        for (std::size_t t_max : {0u, 1u, 2u, 4u}) {
            auto in = random_instance(rng, S, 2, 2, s);
            const double got = likelihood(in.model, s, in.params, t_max);
            const double oracle = enumerate_likelihood(in.model, flatten(s, in.params, 2, 2), t_max);
            EXPECT_NEAR(got, oracle, 1e-10) << s.describe() << " t_max " << t_max;
        }
}

TEST(ValueFromLikelihood, Cases) {
    EXPECT_DOUBLE_EQ(value_from_likelihood(0.4, 0.0, 10.0, 0.9), 40.0);
    EXPECT_DOUBLE_EQ(value_from_likelihood(0.0, 0.0, 10.0, 0.9), 0.0);
    EXPECT_DOUBLE_EQ(value_from_likelihood(1.0, -1.0, 1.0, 0.5), 2.0);
}

TEST(ValueFromLikelihood, WithinTruncationBound) {
    RandomSource rng(10);
    for (const auto& s : structures())
        for (int rep = 0; rep < 3; ++rep) {
            auto in = random_instance(rng, 4, 2, 2, s);
            const auto r = normalize_rewards(in.model);
            for (std::size_t t_max : {20u, 100u}) {
                const double v =
                    value_from_likelihood(likelihood(in.model, s, in.params, t_max), r.r_min, r.r_max, 0.9);
                EXPECT_NEAR(v, evaluate_exact(in.model, s, in.params),
                            truncation_bound(0.9, t_max, r.r_min, r.r_max) + 1e-6);
            }
        }
}

TEST(Inference, DumpMessages) {
    RandomSource rng(11);
    auto in = random_instance(rng, 2, 2, 2, ControllerStructure::flat(2));
    auto k = build_kernel(in.model, in.structure, in.params);
    std::ostringstream out;
    dump_messages(out, infer(k, normalize_rewards(in.model), 2), 2);
    const auto text = out.str();
    EXPECT_NE(text.find("likelihood"), std::string::npos);
    EXPECT_NE(text.find("alpha 2"), std::string::npos);
    EXPECT_NE(text.find("beta 2"), std::string::npos);
}

TEST(Inference, TimeLinearInHorizon) {
    RandomSource rng(12);
    auto in = random_instance(rng, 8, 3, 3, ControllerStructure::factored({6, 4}));
    auto k = build_kernel(in.model, in.structure, in.params);
    const auto r = normalize_rewards(in.model);
    std::uint64_t ops[2];
    for (int i = 0; i < 2; ++i) {
        k.reset_operation_count();
        infer(k, r, 100 * (i + 1));
        ops[i] = k.operation_count();
    }
    EXPECT_EQ(ops[1], 2 * ops[0]);
}
