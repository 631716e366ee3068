#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srl4h/trainer/trainer.hpp"

namespace srl4h::cli {

struct LoggingConfig {
  int print_every = 10;  // progress line cadence on stdout; 0 disables
  int probe_size = 256;
};

struct ExperimentConfig {
  trainer::TrainerConfig trainer;
  LoggingConfig logging;
};

// Full document with every key present and defaults resolved.
nlohmann::json to_json(const ExperimentConfig& config);

// Starts from defaults and overlays `doc`. Unknown sections or keys and
// wrongly typed values raise ConfigError naming the key. Validates the result.
ExperimentConfig from_json(const nlohmann::json& doc);

// Applies "section.key=value". The value is parsed as JSON when possible and
// taken as a plain string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

// Reads the file (or starts from an empty document), applies overrides and an
// optional seed, and validates.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed);

// Stable hex digest of the resolved config with the seed removed; groups runs
// that differ only by seed.
std::string config_group_hash(const nlohmann::json& resolved);

}  // namespace srl4h::cli
