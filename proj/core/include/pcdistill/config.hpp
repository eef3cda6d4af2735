#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcdistill/types.hpp"

namespace pcdistill {

/// Flat `key = value` configuration, one pair per line, '#' comments, keys
/// namespaced with dots (distill.lambda, fmd.k, encoder.levels). Unknown keys
/// are rejected by the consumer, not the parser; parse errors carry the line
/// number.
class Config {
  public:
    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::int64_t> get_int_list(const std::string& key,
                                           const std::vector<std::int64_t>& fallback) const;
    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const;

    void set(const std::string& key, const std::string& value) {
        values_[key] = {value, 0};
    }

    /// Rejects keys present in the file but never read by any accessor, so a
    /// typo like `distil.lambda` fails (with its line number) instead of
    /// silently using the default.
    void reject_unread_keys() const;

    /// Rejects any key outside the given registry (with its line number).
    /// Commands share one config file, so validation is against the full
    /// known-key set rather than what one command happens to read.
    void validate_keys(const std::vector<std::string>& known) const;

  private:
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::map<std::string, Entry> values_;
    mutable std::map<std::string, bool> read_;
};

}  // namespace pcdistill
