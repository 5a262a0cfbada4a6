#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace bsdn {

// Line-based `key = value` run configuration. '#' starts a comment. Keys are
// validated against the consumer's allow-list so typos fail loudly.
struct RunConfig {
    std::vector<std::pair<std::string, std::string>> entries;

    bool has(const std::string& key) const {
        for (const auto& kv : entries)
            if (kv.first == key) return true;
        return false;
    }
    std::string get(const std::string& key) const {
        for (const auto& kv : entries)
            if (kv.first == key) return kv.second;
        throw std::out_of_range("config: missing key '" + key + "'");
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static RunConfig parse_file(const std::string& path, const std::set<std::string>& allowed_keys) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config file: " + path);
        RunConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (!allowed_keys.count(key))
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
            cfg.entries.emplace_back(std::move(key), std::move(val));
        }
        return cfg;
    }
};

}  // namespace bsdn
