#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace srl4h::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct TrainOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int episodes = 10;
  bool stochastic = false;
  std::optional<std::filesystem::path> out;
};

struct SweepOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::string grid;  // path to a JSON file or an inline JSON object
  std::optional<std::filesystem::path> out;
};

struct ExportOptions {
  std::vector<std::filesystem::path> runs;  // run directories or sweep directories
  std::vector<std::string> metrics;         // e.g. mean_reward, terms.lin_vel_tracking
  std::filesystem::path out;                // long CSV; the aggregate goes next to it
};

// Directory used when --out is not given: $SRL4H_OUT_ROOT (default "runs").
std::filesystem::path output_root();

// One entry per grid point: the "section.key=value" overrides to apply.
// Keys are visited in sorted order, the first key varying slowest.
std::vector<std::vector<std::string>> expand_grid(const nlohmann::json& grid);

std::filesystem::path aggregate_path(const std::filesystem::path& long_csv);

int cmd_train(const TrainOptions& opts);
int cmd_eval(const EvalOptions& opts);
int cmd_sweep(const SweepOptions& opts);
int cmd_export(const ExportOptions& opts);

// Parses argv and dispatches; returns the process exit code.
int run_cli(int argc, const char* const* argv);

}  // namespace srl4h::cli
