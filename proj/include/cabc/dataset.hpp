#pragma once

// JSON-lines persistence for trajectories and labeled pools.
//
// Trajectory files hold a header line per trajectory followed by its samples:
//   {"kind":"traj","traj_id":0,"outcome":"success","reason":"reached_target"}
//   {"kind":"sample","traj_id":0,"k":0,"x":[...],"y":[...],"u_expert":[..],"u_applied":[..],"x_next":[...],"safe":null}
// Pool files hold one state per line:
//   {"kind":"state","set":"plus"|"query"|"minus","x":[...]}
// Numbers are written with 17 significant digits so load(save(x)) is bit-exact.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cabc/core.hpp"

namespace cabc {

class DatasetError : public Error {
public:
    DatasetError(std::size_t line, const std::string& field, const std::string& what)
        : Error("line " + std::to_string(line) + ", field '" + field + "': " + what), line_(line), field_(field) {}

    std::size_t line() const { return line_; }
    const std::string& field() const { return field_; }

private:
    std::size_t line_;
    std::string field_;
};

namespace detail {

inline void write_number(std::ostream& os, double v) {
    if (!std::isfinite(v)) throw Error("dataset: cannot serialize a non-finite value");
    if (v == 0.0 && std::signbit(v)) {
        os << "-0.0";  // "-0" would parse back as the integer 0
        return;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    os << buf;
}

template <class Range>
void write_array(std::ostream& os, const Range& values) {
    os << '[';
    bool first = true;
    for (double v : values) {
        if (!first) os << ',';
        write_number(os, v);
        first = false;
    }
    os << ']';
}

inline std::vector<double> read_array(const nlohmann::json& j, const char* field, std::size_t line,
                                      std::size_t expected = 0) {
    if (!j.contains(field)) throw DatasetError(line, field, "missing");
    const auto& a = j.at(field);
    if (!a.is_array()) throw DatasetError(line, field, "expected array");
    if (expected != 0 && a.size() != expected)
        throw DatasetError(line, field, "expected " + std::to_string(expected) + " values, got " + std::to_string(a.size()));
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& v : a) {
        if (!v.is_number()) throw DatasetError(line, field, "non-numeric entry");
        out.push_back(v.get<double>());
    }
    return out;
}

inline long long read_int(const nlohmann::json& j, const char* field, std::size_t line) {
    if (!j.contains(field) || !j.at(field).is_number_integer()) throw DatasetError(line, field, "expected integer");
    return j.at(field).get<long long>();
}

inline std::string read_string(const nlohmann::json& j, const char* field, std::size_t line) {
    if (!j.contains(field) || !j.at(field).is_string()) throw DatasetError(line, field, "expected string");
    return j.at(field).get<std::string>();
}

inline nlohmann::json parse_line(const std::string& text, std::size_t line) {
    try {
        auto j = nlohmann::json::parse(text);
        if (!j.is_object()) throw DatasetError(line, "<record>", "expected JSON object");
        return j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DatasetError(line, "<record>", std::string("malformed JSON: ") + e.what());
    }
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

}  // namespace detail

inline void write_trajectory(std::ostream& os, const Trajectory& t, long long traj_id) {
    os << "{\"kind\":\"traj\",\"traj_id\":" << traj_id << ",\"outcome\":\"" << to_string(t.outcome)
       << "\",\"reason\":\"" << to_string(t.termination_reason) << "\"}\n";
    for (std::size_t k = 0; k < t.samples.size(); ++k) {
        const Sample& s = t.samples[k];
        os << "{\"kind\":\"sample\",\"traj_id\":" << traj_id << ",\"k\":" << k << ",\"x\":";
        detail::write_array(os, s.x.to_array());
        os << ",\"y\":";
        detail::write_array(os, s.y.values);
        os << ",\"u_expert\":";
        detail::write_array(os, std::array{s.u_expert.u_a, s.u_expert.u_steer});
        os << ",\"u_applied\":";
        detail::write_array(os, std::array{s.u_applied.u_a, s.u_applied.u_steer});
        os << ",\"x_next\":";
        detail::write_array(os, s.x_next.to_array());
        os << ",\"safe\":";
        if (s.safe_label) os << *s.safe_label;
        else os << "null";
        os << "}\n";
    }
}

inline void write_trajectories(std::ostream& os, const std::vector<Trajectory>& trajs, long long first_id = 0) {
    for (std::size_t i = 0; i < trajs.size(); ++i) write_trajectory(os, trajs[i], first_id + static_cast<long long>(i));
}

inline std::vector<Trajectory> read_trajectories(std::istream& is) {
    std::vector<Trajectory> out;
    std::string text;
    std::size_t line = 0;
    long long current_id = -1;
    while (std::getline(is, text)) {
        ++line;
        if (detail::blank(text)) continue;
        auto j = detail::parse_line(text, line);
        const std::string kind = detail::read_string(j, "kind", line);
        const long long id = detail::read_int(j, "traj_id", line);
        if (kind == "traj") {
            Trajectory t;
            try {
                t.outcome = outcome_from_string(detail::read_string(j, "outcome", line));
            } catch (const DatasetError&) {
                throw;
            } catch (const Error& e) {
                throw DatasetError(line, "outcome", e.what());
            }
            try {
                t.termination_reason = termination_from_string(detail::read_string(j, "reason", line));
            } catch (const DatasetError&) {
                throw;
            } catch (const Error& e) {
                throw DatasetError(line, "reason", e.what());
            }
            out.push_back(std::move(t));
            current_id = id;
        } else if (kind == "sample") {
            if (out.empty() || id != current_id) throw DatasetError(line, "traj_id", "sample without preceding trajectory header");
            const long long k = detail::read_int(j, "k", line);
            if (k != static_cast<long long>(out.back().samples.size()))
                throw DatasetError(line, "k", "out-of-order sample index");
            Sample s;
            s.x = VehicleState::from_array(detail::read_array(j, "x", line, VehicleState::kDim));
            s.y.values = detail::read_array(j, "y", line);
            if (s.y.values.size() < Observation::kVelocityChannels) throw DatasetError(line, "y", "too few channels");
            auto ue = detail::read_array(j, "u_expert", line, Action::kDim);
            auto ua = detail::read_array(j, "u_applied", line, Action::kDim);
            s.u_expert = {ue[0], ue[1]};
            s.u_applied = {ua[0], ua[1]};
            s.x_next = VehicleState::from_array(detail::read_array(j, "x_next", line, VehicleState::kDim));
            if (!j.contains("safe")) throw DatasetError(line, "safe", "missing");
            const auto& safe = j.at("safe");
            if (safe.is_null()) {
                s.safe_label.reset();
            } else if (safe.is_number_integer() && (safe.get<int>() == 0 || safe.get<int>() == 1)) {
                s.safe_label = safe.get<int>();
            } else {
                throw DatasetError(line, "safe", "expected 0, 1 or null");
            }
            out.back().samples.push_back(std::move(s));
        } else {
            throw DatasetError(line, "kind", "unknown record kind '" + kind + "'");
        }
    }
    return out;
}

inline void write_pool(std::ostream& os, const LabeledPool& pool) {
    auto emit = [&](const char* set, const std::vector<VehicleState>& states) {
        for (const auto& x : states) {
            os << "{\"kind\":\"state\",\"set\":\"" << set << "\",\"x\":";
            detail::write_array(os, x.to_array());
            os << "}\n";
        }
    };
    emit("plus", pool.d_plus);
    emit("query", pool.d_query);
    emit("minus", pool.d_minus);
}

inline LabeledPool read_pool(std::istream& is) {
    LabeledPool pool;
    std::string text;
    std::size_t line = 0;
    while (std::getline(is, text)) {
        ++line;
        if (detail::blank(text)) continue;
        auto j = detail::parse_line(text, line);
        if (detail::read_string(j, "kind", line) != "state") throw DatasetError(line, "kind", "expected 'state'");
        const std::string set = detail::read_string(j, "set", line);
        auto x = VehicleState::from_array(detail::read_array(j, "x", line, VehicleState::kDim));
        if (set == "plus") pool.d_plus.push_back(x);
        else if (set == "query") pool.d_query.push_back(x);
        else if (set == "minus") pool.d_minus.push_back(x);
        else throw DatasetError(line, "set", "unknown set '" + set + "'");
    }
    return pool;
}

inline void save_dataset(const std::vector<Trajectory>& trajs, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_trajectories(os, trajs);
}

inline void save_dataset(const LabeledPool& pool, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open '" + path + "' for writing");
    write_pool(os, pool);
}

inline std::vector<Trajectory> load_dataset(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path + "' for reading");
    return read_trajectories(is);
}

inline LabeledPool load_pool(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path + "' for reading");
    return read_pool(is);
}

}  // namespace cabc
