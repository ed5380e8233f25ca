#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "controller.hpp"
#include "pomdp_model.hpp"

namespace hfsc {

namespace detail {

inline nlohmann::json table_to_json(const ConditionalTable& t) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
        auto row = t.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return rows;
}

inline ConditionalTable table_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("controller file: expected a non-empty table");
    const std::size_t cols = j.front().size();
    ConditionalTable t(j.size(), cols);
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != cols)
            throw std::invalid_argument("controller file: ragged table");
        for (std::size_t c = 0; c < cols; ++c)
            t(r, c) = j[r][c].get<double>();
    }
    return t;
}

} // namespace detail

inline nlohmann::json controller_to_json(const ControllerStructure& s, const ControllerParams& p) {
    nlohmann::json j;
    j["levels"] = s.level_sizes;
    j["end_nodes"] = s.end_nodes;
    j["family"] = s.is_flat() ? "flat" : (s.constrained ? "hierarchical" : "factored");
    j["initial_top"] = p.initial_top;
    j["action"] = detail::table_to_json(p.action);
    auto list = [](const std::vector<ConditionalTable>& ts) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& t : ts)
            a.push_back(detail::table_to_json(t));
        return a;
    };
    j["successor"] = list(p.successor);
    j["descend"] = list(p.descend);
    j["factored"] = list(p.factored);
    j["initial_levels"] = p.initial_levels;
    return j;
}

inline std::pair<ControllerStructure, ControllerParams> controller_from_json(const nlohmann::json& j) {
    ControllerStructure s;
    s.level_sizes = j.at("levels").get<std::vector<std::size_t>>();
    s.end_nodes = j.value("end_nodes", std::vector<std::size_t>{});
    s.constrained = j.value("family", std::string("hierarchical")) != "factored";
    s.validate();
    ControllerParams p;
    p.initial_top = j.at("initial_top").get<std::vector<double>>();
    p.action = detail::table_from_json(j.at("action"));
    for (const auto& t : j.value("successor", nlohmann::json::array()))
        p.successor.push_back(detail::table_from_json(t));
    for (const auto& t : j.value("descend", nlohmann::json::array()))
        p.descend.push_back(detail::table_from_json(t));
    for (const auto& t : j.value("factored", nlohmann::json::array()))
        p.factored.push_back(detail::table_from_json(t));
    p.initial_levels = j.value("initial_levels", std::vector<std::vector<double>>{});
    return {s, p};
}

inline void save_controller(const std::string& path, const ControllerStructure& s, const ControllerParams& p) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << controller_to_json(s, p).dump(1) << '\n';
}

inline std::pair<ControllerStructure, ControllerParams> load_controller(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read " + path);
    return controller_from_json(nlohmann::json::parse(in));
}

inline constexpr double kGraphThreshold = 0.05;

/**
 * Graphviz listing of a layered controller. One cluster per level; base nodes
 * are labelled with their most likely action. Solid edges are successor
 * transitions labelled by observation, dashed edges are descents from an
 * abstract node into the level below. End nodes are drawn as diamonds.
 * For factored tables an edge is drawn when any parent configuration
 * reaches the threshold.
 */
inline std::string controller_graph(const ControllerStructure& s, const ControllerParams& p, const PomdpModel& model,
                                    double threshold = kGraphThreshold) {
    const std::size_t no = model.num_observations();
    std::ostringstream out;
    auto node_id = [](std::size_t l, std::size_t n) { return "L" + std::to_string(l) + "_" + std::to_string(n); };
    auto fmt = [](double x) {
        std::ostringstream o;
        o.precision(2);
        o << x;
        return o.str();
    };
    out << "digraph controller {\n  rankdir=LR;\n";
    for (std::size_t l = s.num_levels(); l-- > 0;) {
        out << "  subgraph cluster_" << l << " {\n    label=\"level " << l << "\";\n";
        for (std::size_t n = 0; n < s.size(l); ++n) {
            std::string label = std::to_string(n);
            if (l == 0) {
                auto row = p.action.row(n);
                const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
                label += ": " + model.action_label(best);
            }
            const bool end = l < s.end_nodes.size() && s.end_nodes[l] == n && s.constrained;
            out << "    " << node_id(l, n) << " [label=\"" << label << "\"" << (end ? ", shape=diamond" : "") << "];\n";
        }
        out << "  }\n";
    }
    if (uses_factored_tables(s)) {
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            const auto lay = level_layout(s, l, no);
            for (std::size_t o = 0; o < no; ++o)
                for (std::size_t cur = 0; cur < lay.self; ++cur)
                    for (std::size_t nxt = 0; nxt < lay.self; ++nxt) {
                        double best = 0.0;
                        for (std::size_t low = 0; low < lay.lower; ++low)
                            for (std::size_t up = 0; up < lay.upper; ++up)
                                best = std::max(best, p.factored[l](lay.row(o, low, cur, up), nxt));
                        if (best >= threshold)
                            out << "  " << node_id(l, cur) << " -> " << node_id(l, nxt) << " [label=\""
                                << model.observation_label(o) << " (" << fmt(best) << ")\"];\n";
                    }
        }
        for (std::size_t l = 0; l + 1 < s.num_levels(); ++l)
            for (std::size_t c = 0; c < s.size(l); ++c)
                if (p.initial_levels[l][c] >= threshold)
                    out << "  start_" << l << " -> " << node_id(l, c) << " [style=dashed];\n";
    } else {
        for (std::size_t l = 0; l < s.num_levels(); ++l) {
            const std::size_t nl = s.size(l);
            const bool top = l == s.top();
            for (std::size_t cur = 0; cur < nl; ++cur) {
                if (!top && cur == s.end_nodes[l])
                    continue; // an end node hands control back up
                for (std::size_t o = 0; o < no; ++o)
                    for (std::size_t nxt = 0; nxt < nl; ++nxt) {
                        const double pr = p.successor[l](o * nl + cur, nxt);
                        if (pr >= threshold)
                            out << "  " << node_id(l, cur) << " -> " << node_id(l, nxt) << " [label=\""
                                << model.observation_label(o) << " (" << fmt(pr) << ")\"];\n";
                    }
            }
        }
        for (std::size_t l = 0; l + 1 < s.num_levels(); ++l)
            for (std::size_t up = 0; up < s.size(l + 1); ++up)
                for (std::size_t c = 0; c < s.size(l); ++c)
                    if (p.descend[l](up, c) >= threshold)
                        out << "  " << node_id(l + 1, up) << " -> " << node_id(l, c) << " [style=dashed, label=\""
                            << fmt(p.descend[l](up, c)) << "\"];\n";
    }
    out << "}\n";
    return out.str();
}

} // namespace hfsc
