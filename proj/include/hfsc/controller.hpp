#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pomdp_model.hpp"

namespace hfsc {

using RandomSource = std::mt19937_64;

/// Uniform draw in [0, 1) with 53 random bits; identical on every platform.
inline double uniform01(RandomSource& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Row-stochastic matrix stored densely.
class ConditionalTable {
public:
    ConditionalTable() = default;
    ConditionalTable(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), p_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::span<double> row(std::size_t r) { return {p_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {p_.data() + r * cols_, cols_}; }
    double& operator()(std::size_t r, std::size_t c) { return p_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return p_[r * cols_ + c]; }
    std::vector<double>& data() { return p_; }
    const std::vector<double>& data() const { return p_; }

    bool stochastic(double tol = kStochasticTolerance) const {
        for (std::size_t r = 0; r < rows_; ++r)
            if (!detail::is_probability_vector(row(r), tol))
                return false;
        return true;
    }

    friend bool operator==(const ConditionalTable&, const ConditionalTable&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> p_;
};

inline double max_difference(const ConditionalTable& x, const ConditionalTable& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        return INFINITY;
    double d = 0.0;
    for (std::size_t i = 0; i < x.data().size(); ++i)
        d = std::max(d, std::abs(x.data()[i] - y.data()[i]));
    return d;
}

/**
 * Shape of a layered controller. Level 0 is the base level (emits actions),
 * level L-1 the top. Joint node indices place the base digit fastest, so the
 * top digit is the most significant one.
 */
struct ControllerStructure {
    std::vector<std::size_t> level_sizes;
    /// One end node per non-top level. Used by hierarchical (constrained) controllers.
    std::vector<std::size_t> end_nodes;
    bool constrained = true;

    static ControllerStructure flat(std::size_t nodes) { return {{nodes}, {}, true}; }

    static ControllerStructure hierarchical(std::vector<std::size_t> sizes) {
        ControllerStructure s{std::move(sizes), {}, true};
        s.set_default_end_nodes();
        return s;
    }

    static ControllerStructure factored(std::vector<std::size_t> sizes) {
        ControllerStructure s{std::move(sizes), {}, false};
        s.set_default_end_nodes();
        return s;
    }

    /// The end node of each non-top level is its last node.
    void set_default_end_nodes() {
        end_nodes.clear();
        for (std::size_t l = 0; l + 1 < level_sizes.size(); ++l)
            end_nodes.push_back(level_sizes[l] - 1);
    }

    std::size_t num_levels() const { return level_sizes.size(); }
    std::size_t size(std::size_t l) const { return level_sizes[l]; }
    std::size_t top() const { return level_sizes.size() - 1; }
    bool is_flat() const { return level_sizes.size() == 1; }

    /// Product of the sizes of the levels strictly below l.
    std::size_t lower_size(std::size_t l) const {
        std::size_t j = 1;
        for (std::size_t k = 0; k < l; ++k)
            j *= level_sizes[k];
        return j;
    }
    std::size_t upper_size(std::size_t l) const { return l + 1 < level_sizes.size() ? level_sizes[l + 1] : 1; }

    std::size_t joint_size() const { return lower_size(level_sizes.size()); }

    std::size_t digit(std::size_t joint, std::size_t l) const { return (joint / lower_size(l)) % level_sizes[l]; }

    /// True when every level below l sits on its end node; `lower` indexes levels 0..l-1.
    bool lower_at_end(std::size_t lower, std::size_t l) const {
        for (std::size_t k = 0; k < l; ++k) {
            if (lower % level_sizes[k] != end_nodes[k])
                return false;
            lower /= level_sizes[k];
        }
        return true;
    }

    void validate() const {
        if (level_sizes.empty())
            throw std::invalid_argument("controller needs at least one level");
        for (auto n : level_sizes)
            if (n == 0)
                throw std::invalid_argument("every level needs at least one node");
        const bool need_ends = constrained && !is_flat();
        if (need_ends && end_nodes.size() != level_sizes.size() - 1)
            throw std::invalid_argument("hierarchical controller needs one end node per non-top level");
        for (std::size_t l = 0; l < end_nodes.size(); ++l)
            if (l >= level_sizes.size() - 1 || end_nodes[l] >= level_sizes[l])
                throw std::invalid_argument("end node out of range at level " + std::to_string(l));
    }

    std::string describe() const {
        std::string s = "(";
        for (std::size_t l = 0; l < level_sizes.size(); ++l)
            s += (l ? "," : "") + std::to_string(level_sizes[l]);
        return s + ")";
    }

    friend bool operator==(const ControllerStructure&, const ControllerStructure&) = default;
};

/// Row layout of the per-level conditional p(n'^l | o', n^{<l}, n^l, n'^{l+1}).
struct LevelLayout {
    std::size_t num_observations;
    std::size_t lower;
    std::size_t self;
    std::size_t upper;

    std::size_t rows() const { return num_observations * lower * self * upper; }
    std::size_t row(std::size_t o, std::size_t low, std::size_t cur, std::size_t up) const {
        return ((o * lower + low) * self + cur) * upper + up;
    }
};

inline LevelLayout level_layout(const ControllerStructure& s, std::size_t l, std::size_t num_observations) {
    return {num_observations, s.lower_size(l), s.size(l), s.upper_size(l)};
}

/**
 * Policy parameters. Hierarchical structures use `successor` and `descend`;
 * factored structures use `factored` (one table per level, rows laid out by
 * LevelLayout) and `initial_levels` for every level except the top.
 */
struct ControllerParams {
    std::vector<double> initial_top;
    ConditionalTable action;                  // rows: base node
    std::vector<ConditionalTable> successor;  // per level, rows: o' * |N^l| + n^l
    std::vector<ConditionalTable> descend;    // per non-top level, rows: n^{l+1}
    std::vector<ConditionalTable> factored;   // per level, rows: LevelLayout
    std::vector<std::vector<double>> initial_levels;

    friend bool operator==(const ControllerParams&, const ControllerParams&) = default;
};

/// Allocates parameter tables of the right shape (zero-filled, top start at node 0).
inline ControllerParams make_param_shape(const ControllerStructure& s, std::size_t num_actions,
                                         std::size_t num_observations) {
    s.validate();
    ControllerParams p;
    p.initial_top.assign(s.size(s.top()), 0.0);
    p.initial_top[0] = 1.0;
    p.action = ConditionalTable(s.size(0), num_actions);
    if (s.constrained || s.is_flat()) {
        for (std::size_t l = 0; l < s.num_levels(); ++l)
            p.successor.emplace_back(num_observations * s.size(l), s.size(l));
        for (std::size_t l = 0; l + 1 < s.num_levels(); ++l)
            p.descend.emplace_back(s.size(l + 1), s.size(l));
    } else {
        for (std::size_t l = 0; l < s.num_levels(); ++l)
            p.factored.emplace_back(level_layout(s, l, num_observations).rows(), s.size(l));
        for (std::size_t l = 0; l + 1 < s.num_levels(); ++l) {
            p.initial_levels.emplace_back(s.size(l), 0.0);
            p.initial_levels.back()[0] = 1.0;
        }
    }
    return p;
}

inline bool uses_factored_tables(const ControllerStructure& s) { return !s.constrained && !s.is_flat(); }

inline void validate_params(const ControllerStructure& s, const ControllerParams& p, std::size_t num_actions,
                            std::size_t num_observations) {
    s.validate();
    auto fail = [](const std::string& what) { throw std::invalid_argument("controller params: " + what); };
    if (p.initial_top.size() != s.size(s.top()) || !detail::is_probability_vector(p.initial_top))
        fail("initial_top");
    if (p.action.rows() != s.size(0) || p.action.cols() != num_actions || !p.action.stochastic())
        fail("action table");
    if (uses_factored_tables(s)) {
        if (p.factored.size() != s.num_levels() || p.initial_levels.size() + 1 != s.num_levels())
            fail("factored tables missing");
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            if (p.factored[l].rows() != level_layout(s, l, num_observations).rows() ||
                p.factored[l].cols() != s.size(l) || !p.factored[l].stochastic())
                fail("factored table at level " + std::to_string(l));
            if (l + 1 < s.num_levels() && (p.initial_levels[l].size() != s.size(l) ||
                                           !detail::is_probability_vector(p.initial_levels[l])))
                fail("initial distribution at level " + std::to_string(l));
        }
    } else {
        if (p.successor.size() != s.num_levels() || p.descend.size() + 1 != s.num_levels())
            fail("hierarchical tables missing");
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            if (p.successor[l].rows() != num_observations * s.size(l) || p.successor[l].cols() != s.size(l) ||
                !p.successor[l].stochastic())
                fail("successor table at level " + std::to_string(l));
            if (l + 1 < s.num_levels() && (p.descend[l].rows() != s.size(l + 1) ||
                                           p.descend[l].cols() != s.size(l) || !p.descend[l].stochastic()))
                fail("descend table at level " + std::to_string(l));
        }
    }
}

/**
 * Conditional of level l given all current nodes and o', with the end-node
 * case logic of a hierarchical controller:
 *   - levels 0..l-1 all at their end nodes and (l is not the top and n^l is
 *     its end node): p(n'^l | n'^{l+1}) from the descend table;
 *   - levels 0..l-1 all at their end nodes otherwise: p(n'^l | o', n^l);
 *   - else n'^l = n^l.
 * Factored structures return their level table unchanged.
 */
inline ConditionalTable compose_layered_conditional(const ControllerStructure& s, const ControllerParams& p,
                                                    std::size_t l, std::size_t num_observations) {
    if (l >= s.num_levels())
        throw std::out_of_range("level out of range");
    if (uses_factored_tables(s))
        return p.factored.at(l);
    if (!s.is_flat() && s.end_nodes.size() + 1 != s.num_levels())
        throw std::invalid_argument("hierarchical controller is missing end-node designations");
    const auto lay = level_layout(s, l, num_observations);
    const bool top = l == s.top();
    ConditionalTable out(lay.rows(), lay.self);
    for (std::size_t o = 0; o < lay.num_observations; ++o)
        for (std::size_t low = 0; low < lay.lower; ++low) {
            const bool gate = s.lower_at_end(low, l);
            for (std::size_t cur = 0; cur < lay.self; ++cur)
                for (std::size_t up = 0; up < lay.upper; ++up) {
                    auto dst = out.row(lay.row(o, low, cur, up));
                    if (!gate) {
                        dst[cur] = 1.0;
                    } else if (!top && cur == s.end_nodes[l]) {
                        auto src = p.descend[l].row(up);
                        std::copy(src.begin(), src.end(), dst.begin());
                    } else {
                        auto src = p.successor[l].row(o * lay.self + cur);
                        std::copy(src.begin(), src.end(), dst.begin());
                    }
                }
        }
    return out;
}

/// Distribution over the joint node at time 0.
inline std::vector<double> initial_joint(const ControllerStructure& s, const ControllerParams& p) {
    const std::size_t top = s.top();
    std::vector<double> cur(p.initial_top); // over levels top..l, top digit most significant
    for (std::size_t l = top; l-- > 0;) {
        const std::size_t nl = s.size(l);
        std::vector<double> next(cur.size() * nl, 0.0);
        for (std::size_t hi = 0; hi < cur.size(); ++hi) {
            if (cur[hi] == 0.0)
                continue;
            const std::size_t parent = hi % s.size(l + 1);
            std::span<const double> row =
                uses_factored_tables(s) ? std::span<const double>(p.initial_levels[l]) : p.descend[l].row(parent);
            for (std::size_t c = 0; c < nl; ++c)
                next[hi * nl + c] = cur[hi] * row[c];
        }
        cur = std::move(next);
    }
    // cur is indexed top-major, which is exactly the joint layout.
    return cur;
}

/**
 * Controller in composed form: every level conditional expanded to the full
 * LevelLayout. This is what inference and simulation consume.
 */
struct LayeredPolicy {
    ControllerStructure structure;
    std::size_t num_actions = 0;
    std::size_t num_observations = 0;
    std::vector<double> initial;            // joint
    ConditionalTable action;                // base node -> actions
    std::vector<ConditionalTable> levels;   // LevelLayout rows
    std::vector<LevelLayout> layouts;

    std::size_t joint_size() const { return initial.size(); }
};

inline LayeredPolicy compose(const ControllerStructure& s, const ControllerParams& p, std::size_t num_actions,
                             std::size_t num_observations) {
    validate_params(s, p, num_actions, num_observations);
    LayeredPolicy out;
    out.structure = s;
    out.num_actions = num_actions;
    out.num_observations = num_observations;
    out.initial = initial_joint(s, p);
    out.action = p.action;
    for (std::size_t l = 0; l < s.num_levels(); ++l) {
        out.levels.push_back(compose_layered_conditional(s, p, l, num_observations));
        out.layouts.push_back(level_layout(s, l, num_observations));
    }
    return out;
}

/// Single-level controller: p_n, p_{a|n}, p_{n'|n o'}.
struct FlatController {
    std::size_t num_nodes = 0;
    std::size_t num_observations = 0;
    std::vector<double> initial;
    ConditionalTable action;     // rows: node
    ConditionalTable successor;  // rows: node * |O| + o'

    std::span<const double> next(std::size_t n, std::size_t o) const { return successor.row(n * num_observations + o); }

    void validate(std::size_t num_actions) const {
        if (initial.size() != num_nodes || !detail::is_probability_vector(initial))
            throw std::invalid_argument("flat controller: initial distribution");
        if (action.rows() != num_nodes || action.cols() != num_actions || !action.stochastic())
            throw std::invalid_argument("flat controller: action table");
        if (successor.rows() != num_nodes * num_observations || successor.cols() != num_nodes ||
            !successor.stochastic())
            throw std::invalid_argument("flat controller: successor table");
    }
};

inline constexpr std::size_t kDefaultFlattenCap = 1'000'000;

/// Expands a layered policy over the product node space.
inline FlatController flatten(const LayeredPolicy& pol, std::size_t cap = kDefaultFlattenCap) {
    const auto& s = pol.structure;
    const std::size_t joint = pol.joint_size();
    if (joint > cap)
        throw std::length_error("flattened controller has " + std::to_string(joint) + " nodes, cap is " +
                                std::to_string(cap));
    const std::size_t no = pol.num_observations;
    FlatController f;
    f.num_nodes = joint;
    f.num_observations = no;
    f.initial = pol.initial;
    f.action = ConditionalTable(joint, pol.num_actions);
    for (std::size_t n = 0; n < joint; ++n) {
        auto src = pol.action.row(n % s.size(0));
        std::copy(src.begin(), src.end(), f.action.row(n).begin());
    }
    f.successor = ConditionalTable(joint * no, joint);
    const std::size_t levels = s.num_levels();
    // Next levels are sampled top-down; `partial` holds n'^{l..top} (top-major).
    std::vector<double> partial, next;
    for (std::size_t n = 0; n < joint; ++n)
        for (std::size_t o = 0; o < no; ++o) {
            partial.assign(1, 1.0);
            for (std::size_t l = levels; l-- > 0;) {
                const auto& lay = pol.layouts[l];
                const std::size_t low = n % lay.lower;
                const std::size_t cur = s.digit(n, l);
                next.assign(partial.size() * lay.self, 0.0);
                for (std::size_t hi = 0; hi < partial.size(); ++hi) {
                    if (partial[hi] == 0.0)
                        continue;
                    const std::size_t up = l + 1 < levels ? hi % s.size(l + 1) : 0;
                    auto row = pol.levels[l].row(lay.row(o, low, cur, up));
                    for (std::size_t c = 0; c < lay.self; ++c)
                        next[hi * lay.self + c] = partial[hi] * row[c];
                }
                partial.swap(next);
            }
            std::copy(partial.begin(), partial.end(), f.successor.row(n * no + o).begin());
        }
    return f;
}

inline FlatController flatten(const ControllerStructure& s, const ControllerParams& p, std::size_t num_actions,
                              std::size_t num_observations, std::size_t cap = kDefaultFlattenCap) {
    return flatten(compose(s, p, num_actions, num_observations), cap);
}

/// Parameters with every row drawn uniformly at random and normalized; for tests and demos.
inline ControllerParams random_params(const ControllerStructure& s, std::size_t num_actions,
                                      std::size_t num_observations, RandomSource& rng, bool random_start = false) {
    auto p = make_param_shape(s, num_actions, num_observations);
    auto fill = [&](std::span<double> row) {
        double z = 0.0;
        for (double& x : row)
            z += (x = uniform01(rng) + 1e-3);
        for (double& x : row)
            x /= z;
    };
    auto fill_table = [&](ConditionalTable& t) {
        for (std::size_t r = 0; r < t.rows(); ++r)
            fill(t.row(r));
    };
    fill_table(p.action);
    for (auto& t : p.successor)
        fill_table(t);
    for (auto& t : p.descend)
        fill_table(t);
    for (auto& t : p.factored)
        fill_table(t);
    if (random_start) {
        fill(p.initial_top);
        for (auto& v : p.initial_levels)
            fill(v);
    }
    return p;
}

} // namespace hfsc
