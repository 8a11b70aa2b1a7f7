#pragma once

#include <map>
#include <optional>
#include <string>

namespace totkit {

// Flat key-value configuration, loaded from a plain text file of
// `key = value` lines. '#' starts a comment; blank lines are ignored.
// Every tunable in the library reads its default through one of the
// typed getters so a single file can override any of them.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace totkit
