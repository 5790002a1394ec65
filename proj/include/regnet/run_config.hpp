// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat "key = value" text with '#' comments. One grammar serves both
// run config files and the model-file header; unknown keys are
// rejected against a caller-supplied vocabulary so typos fail loudly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "regnet/errors.hpp"

namespace regnet::cfg {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

class RunConfig {
public:
    static RunConfig parse_string(const std::string& text, const std::string& origin = "<string>") {
        RunConfig cfg;
        std::istringstream is(text);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ParseError(origin + ": line " + std::to_string(line_no) + " has no '='");
            }
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ParseError(origin + ": line " + std::to_string(line_no) + " has an empty key");
            }
            if (!cfg.kv_.emplace(key, value).second) {
                throw ParseError(origin + ": duplicate key '" + key + "' on line " +
                                 std::to_string(line_no));
            }
        }
        return cfg;
    }

    static RunConfig parse_file(const std::filesystem::path& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config file " + path.string());
        std::ostringstream buf;
        buf << is.rdbuf();
        return parse_string(buf.str(), path.string());
    }

    bool has(const std::string& key) const { return kv_.count(key) > 0; }

    const std::string& str(const std::string& key) const {
        const auto it = kv_.find(key);
        if (it == kv_.end()) throw ConfigError("missing required key '" + key + "'");
        return it->second;
    }

    std::string str_or(const std::string& key, const std::string& def) const {
        const auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }

    double number(const std::string& key) const { return to_number(key, str(key)); }
    double number_or(const std::string& key, double def) const {
        return has(key) ? number(key) : def;
    }

    std::uint64_t uint(const std::string& key) const { return to_uint(key, str(key)); }
    std::uint64_t uint_or(const std::string& key, std::uint64_t def) const {
        return has(key) ? uint(key) : def;
    }

    long integer(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const long out = std::stol(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
        }
    }
    long integer_or(const std::string& key, long def) const {
        return has(key) ? integer(key) : def;
    }

    // Every present key must belong to the vocabulary.
    void reject_unknown(const std::set<std::string>& known) const {
        for (const auto& [key, value] : kv_) {
            if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
        }
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    double to_number(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const double out = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
        }
    }

    std::uint64_t to_uint(const std::string& key, const std::string& v) const {
        try {
            std::size_t used = 0;
            const unsigned long long out = std::stoull(v, &used);
            if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument(v);
            return out;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
        }
    }

    std::map<std::string, std::string> kv_;
};

}  // namespace regnet::cfg
