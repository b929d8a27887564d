#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace tpseg {

// Flat key=value configuration. Lines are `key = value`, `#` starts a
// comment. Later sources (files, --set overrides) win over earlier ones.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    // Accepts "key=value"; throws ValidationError otherwise.
    void apply_override(const std::string& assignment);

    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_uint64(const std::string& key, std::uint64_t fallback) const;

    // Sorted `key = value` lines; the canonical form used for run-dir
    // copies and for the checksum.
    std::string serialize() const;
    std::uint64_t checksum() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace tpseg
