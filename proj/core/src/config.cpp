#include "pcdistill/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "pcdistill/errors.hpp"
#include "pcdistill/io.hpp"

namespace pcdistill {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream ss(s);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        if (cfg.values_.count(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" +
                              key + "'");
        cfg.values_[key] = {value, line_no};
    }
    return cfg;
}

Config Config::load(const std::string& path) { return parse(io::read_file(path)); }

std::string Config::get_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required config key '" + key + "'");
    read_[key] = true;
    return it->second.value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    return it->second.value;
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    const std::string& s = it->second.value;
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    return v;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    const std::string& s = it->second.value;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    return v;
}

std::uint64_t Config::get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    const std::string& s = it->second.value;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a seed, got '" + s + "'");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    const std::string& s = it->second.value;
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

std::vector<std::int64_t> Config::get_int_list(
    const std::string& key, const std::vector<std::int64_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    std::vector<std::int64_t> out;
    for (const std::string& item : split_list(it->second.value)) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size())
            throw ConfigError("config key '" + key + "': bad list entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

std::vector<std::string> Config::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    read_[key] = true;
    std::vector<std::string> out = split_list(it->second.value);
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void Config::reject_unread_keys() const {
    for (const auto& [k, v] : values_)
        if (!read_.count(k))
            throw ConfigError("config line " + std::to_string(v.line) + ": unknown key '" +
                              k + "'");
}

void Config::validate_keys(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_) {
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("config line " + std::to_string(v.line) + ": unknown key '" +
                              k + "'");
    }
}

}  // namespace pcdistill
