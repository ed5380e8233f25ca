#pragma once

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include "controller.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& what, double rcond)
        : std::runtime_error(what + " (reciprocal condition estimate " + std::to_string(rcond) + ")"), rcond(rcond) {}

    double rcond;
};

struct ControllerValue {
    std::size_t num_states = 0;
    std::vector<double> table; // (node, state)
    double value = 0.0;        // at the initial belief and initial node distribution

    double operator()(std::size_t n, std::size_t s) const { return table[n * num_states + s]; }
};

/// Dense systems up to this many unknowns use LU, larger ones BiCGSTAB.
inline constexpr std::size_t kDenseSolveLimit = 6000;

/**
 * Solves V(n,s) = Σ_a p(a|n) [r(a,s) + γ Σ_{s',o',n'} T(s'|a,s) Z(o'|s',a) p(n'|n,o') V(n',s')].
 */
inline ControllerValue evaluate_exact(const PomdpModel& model, const FlatController& fc) {
    fc.validate(model.num_actions());
    if (fc.num_observations != model.num_observations())
        throw std::invalid_argument("controller and model disagree on the observation count");
    const std::size_t ns = model.num_states(), na = model.num_actions(), no = model.num_observations();
    const std::size_t nn = fc.num_nodes;
    const std::size_t dim = nn * ns;
    const double g = model.discount();

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    std::vector<Eigen::Triplet<double>> entries;
    std::vector<double> row(dim);
    for (std::size_t n = 0; n < nn; ++n)
        for (std::size_t s = 0; s < ns; ++s) {
            std::fill(row.begin(), row.end(), 0.0);
            double r = 0.0;
            for (std::size_t a = 0; a < na; ++a) {
                const double pa = fc.action(n, a);
                if (pa == 0.0)
                    continue;
                r += pa * model.reward(a, s);
                for (std::size_t t = 0; t < ns; ++t) {
                    const double pt = pa * model.transition(a, s, t);
                    if (pt == 0.0)
                        continue;
                    for (std::size_t o = 0; o < no; ++o) {
                        const double w = pt * model.observation(t, a, o);
                        if (w == 0.0)
                            continue;
                        auto next = fc.next(n, o);
                        for (std::size_t m = 0; m < nn; ++m)
                            row[m * ns + t] += w * next[m];
                    }
                }
            }
            const std::size_t i = n * ns + s;
            rhs[static_cast<Eigen::Index>(i)] = r;
            for (std::size_t j = 0; j < dim; ++j) {
                double v = (i == j ? 1.0 : 0.0) - g * row[j];
                if (v != 0.0)
                    entries.emplace_back(static_cast<int>(i), static_cast<int>(j), v);
            }
        }

    Eigen::VectorXd x;
    if (dim <= kDenseSolveLimit) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        for (const auto& e : entries)
            a(e.row(), e.col()) = e.value();
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
        const double rc = lu.rcond();
        if (!(rc > 1e-14))
            throw SolverError("controller evaluation system is numerically singular", rc);
        x = lu.solve(rhs);
    } else {
        Eigen::SparseMatrix<double, Eigen::RowMajor> a(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
        a.setFromTriplets(entries.begin(), entries.end());
        Eigen::BiCGSTAB<Eigen::SparseMatrix<double, Eigen::RowMajor>> solver(a);
        solver.setTolerance(1e-12);
        x = solver.solve(rhs);
        if (solver.info() != Eigen::Success)
            throw SolverError("iterative controller evaluation did not converge", 0.0);
    }
    if (!x.allFinite())
        throw SolverError("controller evaluation produced non-finite values", 0.0);

    ControllerValue out;
    out.num_states = ns;
    out.table.assign(x.data(), x.data() + dim);
    for (std::size_t n = 0; n < nn; ++n)
        for (std::size_t s = 0; s < ns; ++s)
            out.value += fc.initial[n] * model.initial_belief()[s] * out(n, s);
    return out;
}

inline double evaluate_exact(const PomdpModel& model, const ControllerStructure& s, const ControllerParams& p) {
    return evaluate_exact(model, flatten(s, p, model.num_actions(), model.num_observations())).value;
}

} // namespace hfsc
