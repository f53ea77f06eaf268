#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "cabc/core.hpp"

namespace cabc {

/// Flat `key = value` configuration. Lines starting with '#' are comments.
class KeyValues {
public:
    static KeyValues parse(std::istream& is, const std::string& origin = "<config>") {
        KeyValues kv;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
            kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return kv;
    }

    static KeyValues load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw Error("cannot open config '" + path + "'");
        return parse(is, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    template <class T>
    void get(const std::string& key, T& out) const {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        std::istringstream is(it->second);
        T v{};
        if constexpr (std::is_same_v<T, bool>) {
            std::string s;
            is >> s;
            if (s == "1" || s == "true") v = true;
            else if (s == "0" || s == "false") v = false;
            else throw Error("config key '" + key + "': expected boolean, got '" + it->second + "'");
        } else if constexpr (std::is_same_v<T, std::string>) {
            v = it->second;
        } else if constexpr (std::is_floating_point_v<T>) {
            // strtod accepts nan and inf, which operator>> rejects.
            const std::string& text = it->second;
            char* end = nullptr;
            const double d = std::strtod(text.c_str(), &end);
            if (text.empty() || end != text.c_str() + text.size())
                throw Error("config key '" + key + "': cannot parse '" + text + "'");
            v = static_cast<T>(d);
        } else {
            if (!(is >> v) || !(is >> std::ws).eof()) throw Error("config key '" + key + "': cannot parse '" + it->second + "'");
        }
        out = v;
    }

    /// Keys present in the file that no consumer asked for.
    std::set<std::string> unused() const {
        std::set<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.insert(k);
        return out;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace cabc
