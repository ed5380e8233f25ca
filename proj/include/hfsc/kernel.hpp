#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "controller.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

/**
 * Joint (node, state) transition operator of one time slice with actions and
 * observations summed out:
 *
 *   K(n', s' | n, s) = Σ_{a, o'} p(a | n^0) T(s'|a,s) Z(o'|s',a) Π_l p(n'^l | parents)
 *
 * The operator is never expanded. Distributions over (n, s) are stored state
 * major, index s * |N| + n, so each per-state slice over joint nodes is
 * contiguous. Eliminating the state factor first and then the node levels one
 * at a time costs O(|N||A||S|^2 + |S||O||N| Σ_l |N^l|) per application.
 */
class TwoSliceKernel {
public:
    TwoSliceKernel(const PomdpModel& model, LayeredPolicy policy)
        : model_(&model), pol_(std::move(policy)) {
        if (pol_.num_actions != model.num_actions() || pol_.num_observations != model.num_observations())
            throw std::invalid_argument("policy and model disagree on action/observation counts");
        ns_ = model.num_states();
        na_ = model.num_actions();
        no_ = model.num_observations();
        nn_ = pol_.joint_size();
        sparse_t_.resize(na_ * ns_);
        for (std::size_t a = 0; a < na_; ++a)
            for (std::size_t s = 0; s < ns_; ++s)
                for (std::size_t t = 0; t < ns_; ++t)
                    if (double p = model.transition(a, s, t); p != 0.0)
                        sparse_t_[a * ns_ + s].push_back({t, p});
        base_of_.resize(nn_);
        act_.resize(na_ * nn_);
        for (std::size_t n = 0; n < nn_; ++n) {
            base_of_[n] = n % pol_.structure.size(0);
            for (std::size_t a = 0; a < na_; ++a)
                act_[a * nn_ + n] = pol_.action(base_of_[n], a);
        }
    }

    const PomdpModel& model() const { return *model_; }
    const LayeredPolicy& policy() const { return pol_; }
    std::size_t num_nodes() const { return nn_; }
    std::size_t num_states() const { return ns_; }
    std::size_t size() const { return nn_ * ns_; }
    std::size_t base_node(std::size_t joint) const { return base_of_[joint]; }
    double action_prob(std::size_t joint, std::size_t a) const { return act_[a * nn_ + joint]; }

    /// Multiply-adds performed since construction (or the last reset).
    std::uint64_t operation_count() const { return ops_; }
    void reset_operation_count() { ops_ = 0; }

    /// Analytic multiply-add count of one (forward or transposed) application.
    std::uint64_t cost_estimate() const {
        std::uint64_t level_sum = 0;
        for (auto n : pol_.structure.level_sizes)
            level_sum += n;
        std::uint64_t nnz = 0;
        for (const auto& r : sparse_t_)
            nnz += r.size();
        return nnz * nn_ + 2ull * ns_ * no_ * na_ * nn_ + ns_ * no_ * nn_ * level_sum;
    }
    std::uint64_t dense_cost() const { return static_cast<std::uint64_t>(nn_) * nn_ * ns_ * ns_; }

    /// out = K applied to a distribution over (n, s).
    void apply(std::span<const double> in, std::span<double> out) const {
        state_forward(in, scratch_a_);
        std::fill(out.begin(), out.end(), 0.0);
        for (std::size_t t = 0; t < ns_; ++t)
            for (std::size_t o = 0; o < no_; ++o) {
                if (!mix_observation(t, o, scratch_a_, tmp_))
                    continue;
                push_nodes(o, tmp_, out.subspan(t * nn_, nn_));
            }
    }

    /// out = K^T applied to a function over (n', s').
    void apply_transpose(std::span<const double> in, std::span<double> out) const {
        observation_backward(in, scratch_a_);
        state_backward(scratch_a_, out, nullptr);
    }

    // ---- building blocks shared with the expectation step -------------------

    /// w[a][s'][n] = Σ_o' Z(o'|s',a) Σ_{n'} Π_l p(n'^l|...) in(s', n')
    void observation_backward(std::span<const double> in, std::vector<double>& w) const {
        w.assign(na_ * ns_ * nn_, 0.0);
        pulled_.resize(nn_);
        for (std::size_t t = 0; t < ns_; ++t)
            for (std::size_t o = 0; o < no_; ++o) {
                bool needed = false;
                for (std::size_t a = 0; a < na_ && !needed; ++a)
                    needed = model_->observation(t, a, o) != 0.0;
                if (!needed)
                    continue;
                pull_nodes(o, in.subspan(t * nn_, nn_), pulled_);
                for (std::size_t a = 0; a < na_; ++a) {
                    const double z = model_->observation(t, a, o);
                    if (z == 0.0)
                        continue;
                    double* dst = w.data() + (a * ns_ + t) * nn_;
                    for (std::size_t n = 0; n < nn_; ++n)
                        dst[n] += z * pulled_[n];
                    ops_ += nn_;
                }
            }
    }

    /// c(n) = Σ_a Z(o|s',a) b[a][s'][n]; returns false if identically zero.
    bool mix_observation(std::size_t t, std::size_t o, const std::vector<double>& b, std::vector<double>& c) const {
        c.assign(nn_, 0.0);
        bool any = false;
        for (std::size_t a = 0; a < na_; ++a) {
            const double z = model_->observation(t, a, o);
            if (z == 0.0)
                continue;
            const double* src = b.data() + (a * ns_ + t) * nn_;
            for (std::size_t n = 0; n < nn_; ++n)
                c[n] += z * src[n];
            ops_ += nn_;
            any = true;
        }
        return any;
    }

    /// b[a][s'][n] = Σ_s T(s'|a,s) in(s,n) p(a|n^0)
    void state_forward(std::span<const double> in, std::vector<double>& b) const {
        b.assign(na_ * ns_ * nn_, 0.0);
        tmp_.resize(nn_);
        for (std::size_t a = 0; a < na_; ++a)
            for (std::size_t s = 0; s < ns_; ++s) {
                const double* src = in.data() + s * nn_;
                const double* pa = act_.data() + a * nn_;
                bool any = false;
                for (std::size_t n = 0; n < nn_; ++n) {
                    tmp_[n] = src[n] * pa[n];
                    any |= tmp_[n] != 0.0;
                }
                if (!any)
                    continue;
                for (auto [t, p] : sparse_t_[a * ns_ + s]) {
                    double* dst = b.data() + (a * ns_ + t) * nn_;
                    for (std::size_t n = 0; n < nn_; ++n)
                        dst[n] += p * tmp_[n];
                }
                ops_ += nn_ * (1 + sparse_t_[a * ns_ + s].size());
            }
    }

    /**
     * out(s,n) = Σ_a p(a|n^0) Σ_s' T(s'|a,s) w[a][s'][n]. When `per_action` is
     * non-null it also receives v[a][s][n] = Σ_s' T(s'|a,s) w[a][s'][n].
     */
    void state_backward(const std::vector<double>& w, std::span<double> out, std::vector<double>* per_action) const {
        std::fill(out.begin(), out.end(), 0.0);
        if (per_action)
            per_action->assign(na_ * ns_ * nn_, 0.0);
        tmp_.resize(nn_);
        for (std::size_t a = 0; a < na_; ++a)
            for (std::size_t s = 0; s < ns_; ++s) {
                std::fill(tmp_.begin(), tmp_.end(), 0.0);
                for (auto [t, p] : sparse_t_[a * ns_ + s]) {
                    const double* src = w.data() + (a * ns_ + t) * nn_;
                    for (std::size_t n = 0; n < nn_; ++n)
                        tmp_[n] += p * src[n];
                }
                double* dst = out.data() + s * nn_;
                const double* pa = act_.data() + a * nn_;
                for (std::size_t n = 0; n < nn_; ++n)
                    dst[n] += pa[n] * tmp_[n];
                if (per_action)
                    std::copy(tmp_.begin(), tmp_.end(), per_action->begin() + static_cast<std::ptrdiff_t>((a * ns_ + s) * nn_));
                ops_ += nn_ * (1 + sparse_t_[a * ns_ + s].size());
            }
    }

    /// out(n') = Σ_n in(n) Π_l p(n'^l | ...), levels eliminated top-down.
    void push_nodes(std::size_t o, std::span<const double> in, std::span<double> out) const {
        const std::size_t levels = pol_.structure.num_levels();
        if (levels == 1) {
            push_level(0, o, in, out);
            return;
        }
        buf_a_.assign(in.begin(), in.end());
        for (std::size_t l = levels; l-- > 0;) {
            buf_b_.assign(nn_, 0.0);
            push_level(l, o, buf_a_, buf_b_);
            buf_a_.swap(buf_b_);
        }
        for (std::size_t n = 0; n < nn_; ++n)
            out[n] += buf_a_[n];
    }

    /// out(n) = Σ_{n'} Π_l p(n'^l | ...) in(n'), levels eliminated bottom-up.
    void pull_nodes(std::size_t o, std::span<const double> in, std::span<double> out) const {
        const std::size_t levels = pol_.structure.num_levels();
        if (levels == 1) {
            pull_level(0, o, in, out);
            return;
        }
        buf_a_.assign(in.begin(), in.end());
        for (std::size_t l = 0; l < levels; ++l) {
            buf_b_.assign(nn_, 0.0);
            pull_level(l, o, buf_a_, buf_b_);
            buf_a_.swap(buf_b_);
        }
        std::copy(buf_a_.begin(), buf_a_.end(), out.begin());
    }

    /**
     * Adds weight * Σ f(n) Π_l p(n'^l|...) g(n') restricted to each level's
     * family (child n'^l and its parents) into counts[l], laid out like the
     * composed level tables.
     */
    void accumulate_families(std::size_t o, std::span<const double> f, std::span<const double> g, double weight,
                             std::vector<ConditionalTable>& counts) const {
        const std::size_t levels = pol_.structure.num_levels();
        // fwd[l]: old digits 0..l-1, new digits l..top (fwd[levels] = f).
        fwd_.resize(levels + 1);
        fwd_[levels].assign(f.begin(), f.end());
        for (std::size_t l = levels; l-- > 0;) {
            fwd_[l].assign(nn_, 0.0);
            push_level(l, o, fwd_[l + 1], fwd_[l]);
        }
        // bwd[l]: old digits 0..l-1, new digits l..top (bwd[0] = g).
        bwd_.resize(levels + 1);
        bwd_[0].assign(g.begin(), g.end());
        for (std::size_t l = 0; l < levels; ++l) {
            bwd_[l + 1].assign(nn_, 0.0);
            pull_level(l, o, bwd_[l], bwd_[l + 1]);
        }
        for (std::size_t l = 0; l < levels; ++l) {
            const auto& lay = pol_.layouts[l];
            const auto& table = pol_.levels[l];
            auto& dst = counts[l];
            const std::size_t j = lay.lower, nl = lay.self;
            const std::size_t rest_count = nn_ / (j * nl);
            const auto& in = fwd_[l + 1];
            const auto& out = bwd_[l];
            for (std::size_t rest = 0; rest < rest_count; ++rest) {
                const std::size_t up = rest % lay.upper;
                for (std::size_t c = 0; c < nl; ++c)
                    for (std::size_t low = 0; low < j; ++low) {
                        const double x = in[low + j * (c + nl * rest)];
                        if (x == 0.0)
                            continue;
                        const std::size_t r = lay.row(o, low, c, up);
                        auto p = table.row(r);
                        auto d = dst.row(r);
                        const double wx = weight * x;
                        for (std::size_t c2 = 0; c2 < nl; ++c2)
                            d[c2] += wx * p[c2] * out[low + j * (c2 + nl * rest)];
                    }
            }
            ops_ += nn_ * nl;
        }
    }

    const std::vector<std::pair<std::size_t, double>>& transitions(std::size_t a, std::size_t s) const {
        return sparse_t_[a * ns_ + s];
    }

private:
    void push_level(std::size_t l, std::size_t o, std::span<const double> in, std::span<double> out) const {
        const auto& lay = pol_.layouts[l];
        const auto& table = pol_.levels[l];
        const std::size_t j = lay.lower, nl = lay.self;
        const std::size_t rest_count = nn_ / (j * nl);
        if (j == 1) {
            // contiguous child block: rows of one (o, up) are adjacent
            for (std::size_t rest = 0; rest < rest_count; ++rest) {
                const double* rows = table.row(lay.row(o, 0, 0, rest % lay.upper)).data();
                const std::size_t stride = lay.upper * nl;
                const double* src = in.data() + nl * rest;
                double* __restrict dst = out.data() + nl * rest;
                for (std::size_t c = 0; c < nl; ++c) {
                    const double x = src[c];
                    if (x == 0.0)
                        continue;
                    const double* __restrict p = rows + c * stride;
                    for (std::size_t c2 = 0; c2 < nl; ++c2)
                        dst[c2] += x * p[c2];
                }
            }
            ops_ += nn_ * nl;
            return;
        }
        for (std::size_t rest = 0; rest < rest_count; ++rest) {
            const std::size_t up = rest % lay.upper;
            for (std::size_t c = 0; c < nl; ++c)
                for (std::size_t low = 0; low < j; ++low) {
                    const double x = in[low + j * (c + nl * rest)];
                    if (x == 0.0)
                        continue;
                    auto p = table.row(lay.row(o, low, c, up));
                    double* dst = out.data() + low + j * nl * rest;
                    for (std::size_t c2 = 0; c2 < nl; ++c2)
                        dst[j * c2] += x * p[c2];
                }
        }
        ops_ += nn_ * nl;
    }

    void pull_level(std::size_t l, std::size_t o, std::span<const double> in, std::span<double> out) const {
        const auto& lay = pol_.layouts[l];
        const auto& table = pol_.levels[l];
        const std::size_t j = lay.lower, nl = lay.self;
        const std::size_t rest_count = nn_ / (j * nl);
        if (j == 1) {
            for (std::size_t rest = 0; rest < rest_count; ++rest) {
                const double* rows = table.row(lay.row(o, 0, 0, rest % lay.upper)).data();
                const std::size_t stride = lay.upper * nl;
                const double* __restrict src = in.data() + nl * rest;
                for (std::size_t c = 0; c < nl; ++c) {
                    const double* __restrict p = rows + c * stride;
                    double acc = 0.0;
                    for (std::size_t c2 = 0; c2 < nl; ++c2)
                        acc += p[c2] * src[c2];
                    out[c + nl * rest] = acc;
                }
            }
            ops_ += nn_ * nl;
            return;
        }
        for (std::size_t rest = 0; rest < rest_count; ++rest) {
            const std::size_t up = rest % lay.upper;
            const double* src = in.data() + j * nl * rest;
            for (std::size_t c = 0; c < nl; ++c)
                for (std::size_t low = 0; low < j; ++low) {
                    auto p = table.row(lay.row(o, low, c, up));
                    double acc = 0.0;
                    for (std::size_t c2 = 0; c2 < nl; ++c2)
                        acc += p[c2] * src[low + j * c2];
                    out[low + j * (c + nl * rest)] = acc;
                }
        }
        ops_ += nn_ * nl;
    }

    const PomdpModel* model_;
    LayeredPolicy pol_;
    std::size_t ns_ = 0, na_ = 0, no_ = 0, nn_ = 0;
    std::vector<std::vector<std::pair<std::size_t, double>>> sparse_t_;
    std::vector<std::size_t> base_of_;
    std::vector<double> act_; // p(a | joint node), action major

    mutable std::uint64_t ops_ = 0;
    mutable std::vector<double> scratch_a_, tmp_, pulled_, buf_a_, buf_b_;
    mutable std::vector<std::vector<double>> fwd_, bwd_;
};

/// The kernel refers to `model`, which must outlive it.
inline TwoSliceKernel build_kernel(const PomdpModel& model, const ControllerStructure& s, const ControllerParams& p) {
    return TwoSliceKernel(model, compose(s, p, model.num_actions(), model.num_observations()));
}

} // namespace hfsc
