#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "pomdp_model.hpp"

namespace hfsc {

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}

    std::size_t line;
};

namespace detail {

struct Token {
    std::string text;
    std::size_t line;
};

inline std::vector<Token> tokenize_pomdp(std::istream& in) {
    std::vector<Token> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        std::string cur;
        auto flush = [&] {
            if (!cur.empty())
                out.push_back({std::move(cur), lineno});
            cur.clear();
        };
        for (char c : line) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                flush();
            } else if (c == ':') {
                flush();
                out.push_back({":", lineno});
            } else {
                cur.push_back(c);
            }
        }
        flush();
    }
    return out;
}

inline std::optional<double> to_number(const std::string& s) {
    if (s.empty())
        return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        return std::nullopt;
    return v;
}

inline std::optional<std::size_t> to_index(const std::string& s) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
        return std::nullopt;
    return static_cast<std::size_t>(std::stoull(s));
}

/// Recursive-descent reader over the token stream of a POMDP file.
class PomdpReader {
public:
    explicit PomdpReader(std::vector<Token> tokens) : tok_(std::move(tokens)) {}

    PomdpModel read() {
        while (pos_ < tok_.size())
            statement();
        return finish();
    }

private:
    enum class Values { reward, cost };

    std::vector<Token> tok_;
    std::size_t pos_ = 0;

    double discount_ = -1.0;
    Values values_ = Values::reward;
    std::size_t ns_ = 0, na_ = 0, no_ = 0;
    std::vector<std::string> snames_, anames_, onames_;
    std::vector<double> start_;
    bool have_start_ = false;
    std::vector<double> trans_, obs_, rew4_;
    bool tables_ready_ = false;

    [[noreturn]] void fail(const std::string& msg) const {
        const std::size_t line = pos_ < tok_.size() ? tok_[pos_].line : (tok_.empty() ? 0 : tok_.back().line);
        throw ParseError(line, msg);
    }

    bool at_end() const { return pos_ >= tok_.size(); }
    const Token& peek(std::size_t k = 0) const { return tok_[pos_ + k]; }
    bool peek_is(std::string_view s, std::size_t k = 0) const {
        return pos_ + k < tok_.size() && tok_[pos_ + k].text == s;
    }

    static bool is_keyword(const std::string& s) {
        return s == "discount" || s == "values" || s == "states" || s == "actions" ||
               s == "observations" || s == "start" || s == "T" || s == "O" || s == "R";
    }

    bool at_statement_start() const {
        if (at_end())
            return true;
        if (!is_keyword(peek().text))
            return false;
        if (peek_is(":", 1))
            return true;
        return peek().text == "start" && (peek_is("include", 1) || peek_is("exclude", 1));
    }

    void expect_colon() {
        if (!peek_is(":"))
            fail("expected ':'");
        ++pos_;
    }

    std::string next_word(const char* what) {
        if (at_end())
            fail(std::string("unexpected end of input, expected ") + what);
        return tok_[pos_++].text;
    }

    double next_number() {
        if (at_end())
            fail("unexpected end of input, expected a number");
        auto v = to_number(peek().text);
        if (!v)
            fail("expected a number, got '" + peek().text + "'");
        ++pos_;
        return *v;
    }

    std::vector<double> numbers(std::size_t count) {
        std::vector<double> v;
        v.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
            v.push_back(next_number());
        return v;
    }

    void need_tables() {
        if (tables_ready_)
            return;
        if (ns_ == 0 || na_ == 0 || no_ == 0)
            fail("states, actions and observations must be declared before T/O/R entries");
        trans_.assign(na_ * ns_ * ns_, 0.0);
        obs_.assign(na_ * ns_ * no_, 0.0);
        rew4_.assign(na_ * ns_ * ns_ * no_, 0.0);
        tables_ready_ = true;
    }

    void declare(std::size_t& count, std::vector<std::string>& names) {
        std::vector<std::string> items;
        while (!at_statement_start())
            items.push_back(next_word("identifier"));
        if (items.empty())
            fail("empty declaration");
        if (items.size() == 1) {
            if (auto n = to_index(items[0])) {
                if (*n == 0)
                    fail("declared count must be positive");
                count = *n;
                names.clear();
                return;
            }
        }
        count = items.size();
        names = std::move(items);
    }

    /// Indices denoted by an identifier; "*" expands to all.
    std::vector<std::size_t> resolve(const std::string& id, std::size_t count,
                                     const std::vector<std::string>& names, const char* kind) const {
        if (id == "*") {
            std::vector<std::size_t> all(count);
            for (std::size_t i = 0; i < count; ++i)
                all[i] = i;
            return all;
        }
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == id)
                return {i};
        if (auto n = to_index(id); n && *n < count)
            return {*n};
        throw ParseError(pos_ == 0 ? 0 : tok_[pos_ - 1].line, std::string("unknown ") + kind + " '" + id + "'");
    }

    std::vector<std::size_t> states(const std::string& id) const { return resolve(id, ns_, snames_, "state"); }
    std::vector<std::size_t> actions(const std::string& id) const { return resolve(id, na_, anames_, "action"); }
    std::vector<std::size_t> observations(const std::string& id) const {
        return resolve(id, no_, onames_, "observation");
    }

    void statement() {
        const std::string key = next_word("statement");
        if (key == "start" && (peek_is("include") || peek_is("exclude"))) {
            const bool include = next_word("include/exclude") == "include";
            expect_colon();
            start_subset(include);
            return;
        }
        if (!is_keyword(key))
            fail("unknown statement '" + key + "'");
        expect_colon();
        if (key == "discount") {
            discount_ = next_number();
        } else if (key == "values") {
            const std::string v = next_word("reward or cost");
            if (v == "reward")
                values_ = Values::reward;
            else if (v == "cost")
                values_ = Values::cost;
            else
                fail("values must be 'reward' or 'cost'");
        } else if (key == "states") {
            declare(ns_, snames_);
        } else if (key == "actions") {
            declare(na_, anames_);
        } else if (key == "observations") {
            declare(no_, onames_);
        } else if (key == "start") {
            start_vector();
        } else if (key == "T") {
            transition_entry();
        } else if (key == "O") {
            observation_entry();
        } else {
            reward_entry();
        }
    }

    void start_vector() {
        if (ns_ == 0)
            fail("start declared before states");
        start_.assign(ns_, 0.0);
        have_start_ = true;
        if (peek_is("uniform")) {
            ++pos_;
            std::fill(start_.begin(), start_.end(), 1.0 / static_cast<double>(ns_));
            return;
        }
        std::vector<std::string> items;
        while (!at_statement_start())
            items.push_back(next_word("start"));
        if (items.size() == ns_) {
            for (std::size_t i = 0; i < ns_; ++i) {
                auto v = to_number(items[i]);
                if (!v)
                    fail("bad start probability '" + items[i] + "'");
                start_[i] = *v;
            }
        } else if (items.size() == 1) {
            start_[states(items[0]).front()] = 1.0;
        } else {
            fail("start vector needs " + std::to_string(ns_) + " entries");
        }
    }

    void start_subset(bool include) {
        if (ns_ == 0)
            fail("start declared before states");
        std::vector<bool> mark(ns_, false);
        while (!at_statement_start())
            for (auto s : states(next_word("state")))
                mark[s] = true;
        start_.assign(ns_, 0.0);
        have_start_ = true;
        std::size_t k = 0;
        for (std::size_t s = 0; s < ns_; ++s)
            k += (mark[s] == include);
        if (k == 0)
            fail("start subset is empty");
        for (std::size_t s = 0; s < ns_; ++s)
            if (mark[s] == include)
                start_[s] = 1.0 / static_cast<double>(k);
    }

    /// Identifiers separated by ':' following "X:"; at most `max` of them.
    std::vector<std::string> path(std::size_t max) {
        std::vector<std::string> ids{next_word("identifier")};
        while (ids.size() < max && peek_is(":")) {
            ++pos_;
            ids.push_back(next_word("identifier"));
        }
        return ids;
    }

    void transition_entry() {
        need_tables();
        auto ids = path(3);
        auto set = [&](std::size_t a, std::size_t s, std::size_t t, double p) {
            trans_[(a * ns_ + s) * ns_ + t] = p;
        };
        if (ids.size() == 3) {
            const double p = next_number();
            for (auto a : actions(ids[0]))
                for (auto s : states(ids[1]))
                    for (auto t : states(ids[2]))
                        set(a, s, t, p);
        } else if (ids.size() == 2) {
            std::vector<double> row;
            if (peek_is("uniform")) {
                ++pos_;
                row.assign(ns_, 1.0 / static_cast<double>(ns_));
            } else {
                row = numbers(ns_);
            }
            for (auto a : actions(ids[0]))
                for (auto s : states(ids[1]))
                    for (std::size_t t = 0; t < ns_; ++t)
                        set(a, s, t, row[t]);
        } else {
            std::vector<double> m;
            if (peek_is("uniform")) {
                ++pos_;
                m.assign(ns_ * ns_, 1.0 / static_cast<double>(ns_));
            } else if (peek_is("identity")) {
                ++pos_;
                m.assign(ns_ * ns_, 0.0);
                for (std::size_t s = 0; s < ns_; ++s)
                    m[s * ns_ + s] = 1.0;
            } else {
                m = numbers(ns_ * ns_);
            }
            for (auto a : actions(ids[0]))
                for (std::size_t s = 0; s < ns_; ++s)
                    for (std::size_t t = 0; t < ns_; ++t)
                        set(a, s, t, m[s * ns_ + t]);
        }
    }

    void observation_entry() {
        need_tables();
        auto ids = path(3);
        auto set = [&](std::size_t a, std::size_t t, std::size_t o, double p) {
            obs_[(a * ns_ + t) * no_ + o] = p;
        };
        if (ids.size() == 3) {
            const double p = next_number();
            for (auto a : actions(ids[0]))
                for (auto t : states(ids[1]))
                    for (auto o : observations(ids[2]))
                        set(a, t, o, p);
        } else if (ids.size() == 2) {
            std::vector<double> row;
            if (peek_is("uniform")) {
                ++pos_;
                row.assign(no_, 1.0 / static_cast<double>(no_));
            } else {
                row = numbers(no_);
            }
            for (auto a : actions(ids[0]))
                for (auto t : states(ids[1]))
                    for (std::size_t o = 0; o < no_; ++o)
                        set(a, t, o, row[o]);
        } else {
            std::vector<double> m;
            if (peek_is("uniform")) {
                ++pos_;
                m.assign(ns_ * no_, 1.0 / static_cast<double>(no_));
            } else {
                m = numbers(ns_ * no_);
            }
            for (auto a : actions(ids[0]))
                for (std::size_t t = 0; t < ns_; ++t)
                    for (std::size_t o = 0; o < no_; ++o)
                        set(a, t, o, m[t * no_ + o]);
        }
    }

    void reward_entry() {
        need_tables();
        auto ids = path(4);
        if (ids.size() < 2)
            fail("R: entries need at least an action and a start state");
        auto set = [&](std::size_t a, std::size_t s, std::size_t t, std::size_t o, double v) {
            rew4_[((a * ns_ + s) * ns_ + t) * no_ + o] = v;
        };
        const auto as = actions(ids[0]);
        const auto ss = states(ids[1]);
        if (ids.size() == 4) {
            const double v = next_number();
            const auto ts = states(ids[2]);
            const auto os = observations(ids[3]);
            for (auto a : as)
                for (auto s : ss)
                    for (auto t : ts)
                        for (auto o : os)
                            set(a, s, t, o, v);
        } else if (ids.size() == 3) {
            const auto row = numbers(no_);
            const auto ts = states(ids[2]);
            for (auto a : as)
                for (auto s : ss)
                    for (auto t : ts)
                        for (std::size_t o = 0; o < no_; ++o)
                            set(a, s, t, o, row[o]);
        } else {
            const auto m = numbers(ns_ * no_);
            for (auto a : as)
                for (auto s : ss)
                    for (std::size_t t = 0; t < ns_; ++t)
                        for (std::size_t o = 0; o < no_; ++o)
                            set(a, s, t, o, m[t * no_ + o]);
        }
    }

    PomdpModel finish() {
        const std::size_t last = tok_.empty() ? 0 : tok_.back().line;
        if (discount_ < 0.0)
            throw ParseError(last, "missing discount");
        if (!(discount_ < 1.0))
            throw ParseError(last, "discount must be < 1 for the infinite-horizon mixture");
        need_tables();
        PomdpModel m(ns_, na_, no_, discount_);
        m.state_names() = snames_;
        m.action_names() = anames_;
        m.observation_names() = onames_;
        auto init = m.initial_belief();
        if (have_start_)
            std::copy(start_.begin(), start_.end(), init.begin());
        else
            std::fill(init.begin(), init.end(), 1.0 / static_cast<double>(ns_));
        for (std::size_t a = 0; a < na_; ++a)
            for (std::size_t s = 0; s < ns_; ++s) {
                auto row = m.transition(a, s);
                std::copy_n(trans_.begin() + static_cast<std::ptrdiff_t>((a * ns_ + s) * ns_), ns_, row.begin());
                auto orow = m.observation(s, a);
                std::copy_n(obs_.begin() + static_cast<std::ptrdiff_t>((a * ns_ + s) * no_), no_, orow.begin());
            }
        // r(a, s) = Σ_{s', o'} T(s'|a,s) Z(o'|s',a) R(a, s, s', o')
        const double sign = values_ == Values::cost ? -1.0 : 1.0;
        for (std::size_t a = 0; a < na_; ++a)
            for (std::size_t s = 0; s < ns_; ++s) {
                double r = 0.0;
                for (std::size_t t = 0; t < ns_; ++t) {
                    const double pt = m.transition(a, s, t);
                    if (pt == 0.0)
                        continue;
                    double inner = 0.0;
                    for (std::size_t o = 0; o < no_; ++o)
                        inner += m.observation(t, a, o) * rew4_[((a * ns_ + s) * ns_ + t) * no_ + o];
                    r += pt * inner;
                }
                m.reward(a, s) = sign * r;
            }
        try {
            m.validate();
        } catch (const ModelError& e) {
            throw ParseError(last, e.what());
        }
        return m;
    }
};

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

/// Parses the standard POMDP text format. Throws ParseError (with line number).
inline PomdpModel parse_pomdp(std::istream& in) {
    detail::PomdpReader reader(detail::tokenize_pomdp(in));
    return reader.read();
}

inline PomdpModel parse_pomdp(const std::string& text) {
    std::istringstream in(text);
    return parse_pomdp(in);
}

inline PomdpModel load_pomdp(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path);
    return parse_pomdp(in);
}

/// Canonical serialization in the same grammar; parse(write(m)) reproduces m.
inline void write_pomdp(std::ostream& out, const PomdpModel& m) {
    using detail::format_real;
    auto decl = [&](const char* key, std::size_t n, const std::vector<std::string>& names) {
        out << key << ':';
        if (names.size() == n && n > 0) {
            for (const auto& s : names)
                out << ' ' << s;
        } else {
            out << ' ' << n;
        }
        out << '\n';
    };
    auto id = [](const std::vector<std::string>& names, std::size_t i) {
        return i < names.size() ? names[i] : std::to_string(i);
    };
    out << "discount: " << format_real(m.discount()) << '\n';
    out << "values: reward\n";
    decl("states", m.num_states(), m.state_names());
    decl("actions", m.num_actions(), m.action_names());
    decl("observations", m.num_observations(), m.observation_names());
    out << "\nstart:";
    for (double p : m.initial_belief())
        out << ' ' << format_real(p);
    out << "\n\n";
    for (std::size_t a = 0; a < m.num_actions(); ++a)
        for (std::size_t s = 0; s < m.num_states(); ++s) {
            out << "T: " << id(m.action_names(), a) << " : " << id(m.state_names(), s) << '\n';
            for (std::size_t t = 0; t < m.num_states(); ++t)
                out << (t ? " " : "") << format_real(m.transition(a, s, t));
            out << '\n';
        }
    out << '\n';
    for (std::size_t a = 0; a < m.num_actions(); ++a)
        for (std::size_t t = 0; t < m.num_states(); ++t) {
            out << "O: " << id(m.action_names(), a) << " : " << id(m.state_names(), t) << '\n';
            for (std::size_t o = 0; o < m.num_observations(); ++o)
                out << (o ? " " : "") << format_real(m.observation(t, a, o));
            out << '\n';
        }
    out << '\n';
    for (std::size_t a = 0; a < m.num_actions(); ++a)
        for (std::size_t s = 0; s < m.num_states(); ++s)
            if (m.reward(a, s) != 0.0)
                out << "R: " << id(m.action_names(), a) << " : " << id(m.state_names(), s) << " : * : * "
                    << format_real(m.reward(a, s)) << '\n';
}

inline std::string write_pomdp(const PomdpModel& m) {
    std::ostringstream out;
    write_pomdp(out, m);
    return out.str();
}

/// Self-describing summary used by the command-line tool.
inline nlohmann::json model_summary(const PomdpModel& m, const std::string& name = {}) {
    const auto nr = normalize_rewards(m);
    nlohmann::json j;
    if (!name.empty())
        j["name"] = name;
    j["states"] = m.num_states();
    j["actions"] = m.num_actions();
    j["observations"] = m.num_observations();
    j["discount"] = m.discount();
    j["r_min"] = nr.r_min;
    j["r_max"] = nr.r_max;
    if (!m.state_names().empty())
        j["state_names"] = m.state_names();
    if (!m.action_names().empty())
        j["action_names"] = m.action_names();
    if (!m.observation_names().empty())
        j["observation_names"] = m.observation_names();
    return j;
}

} // namespace hfsc
