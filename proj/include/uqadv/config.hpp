#pragma once

// Run configuration: flat `key = value` files validated against a fixed schema.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uqadv/common.hpp"

namespace uqadv {

class ConfigError : public Error {
public:
    using Error::Error;
};

enum class ValueType { integer, real, text, real_list, integer_list };

struct ConfigKey {
    std::string name;
    ValueType type;
    std::string default_value;
    std::string help;
};

/// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_schema();

class RunConfig {
public:
    /// All keys at their defaults.
    RunConfig();

    /// Validates `key` against the schema and `value` against its type.
    void set(const std::string& key, const std::string& value);
    const std::string& raw(const std::string& key) const;

    long long get_int(const std::string& key) const;
    std::uint64_t get_seed(const std::string& key) const;
    double get_real(const std::string& key) const;
    const std::string& get_text(const std::string& key) const;
    std::vector<double> get_real_list(const std::string& key) const;
    std::vector<long long> get_int_list(const std::string& key) const;

    /// `key = value` lines, schema order; parse_config_text(to_text()) reproduces this config.
    std::string to_text() const;
    /// FNV-1a of to_text(), hex.
    std::string hash() const;

    bool operator==(const RunConfig&) const = default;

private:
    std::map<std::string, std::string> values_;
};

/// Parses `key = value` lines; '#' starts a comment; later duplicates win. Overrides
/// ("key=value") apply last. Errors name the offending key and line.
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides = {},
                            const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace uqadv
