#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "cspine/pipeline/cross_validation.hpp"

namespace cspine::cli {

// ---------------------------------------------------------------------------
// TOML subset: [table] / [a.b] headers, key = value with integers, floats,
// booleans, basic strings and flat arrays of those; '#' comments.

using TomlScalar = std::variant<std::int64_t, double, bool, std::string>;
using TomlValue = std::variant<std::int64_t, double, bool, std::string, std::vector<TomlScalar>>;

/// Flattened "table.key" → value.
using TomlTable = std::map<std::string, TomlValue>;

/// Throws ConfigError with the offending line number.
TomlTable parse_toml(const std::string& text);

// ---------------------------------------------------------------------------

struct DataConfig {
    Index cases = 140;
    double positive_fraction = 729.0 / 3666.0;
    Index slices = 24;
    Index side = 72;  // raw slice side of generated phantoms
};

struct RunConfig {
    std::string data_dir = "data";
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    int folds = 7;
    int fold = 0;  // fold used by the single-stage commands
    std::vector<Index> hidden_units{128};
    DataConfig data;
    pipeline::TrainConfig train = pipeline::TrainConfig::desk();
    bool gradcam = true;

    void validate() const;
    /// Resolved values as TOML; parse(to_toml()) reproduces the config.
    std::string to_toml() const;
    pipeline::CvConfig cv() const;
};

/// Applies recognised keys over `base`; unknown keys are a ConfigError.
RunConfig apply_toml(const TomlTable& table, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

}  // namespace cspine::cli
