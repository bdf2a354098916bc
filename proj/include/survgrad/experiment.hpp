#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "survgrad/attribution.hpp"
#include "survgrad/baselines.hpp"
#include "survgrad/simulation.hpp"
#include "survgrad/survival_models.hpp"
#include "survgrad/viz.hpp"

namespace survgrad {

// Flat "section.key" -> value settings. Lists are comma-separated.
using ConfigMap = std::map<std::string, std::string>;

// "key = value" lines; '#' starts a comment, blank lines are ignored.
ConfigMap parse_config_text(std::string_view text);
// Nested objects flatten to dotted keys, arrays to comma-separated values.
ConfigMap parse_config_json(const nlohmann::json& doc);
// JSON when the first non-blank character is '{', key-value text otherwise.
ConfigMap load_config_file(const std::filesystem::path& path);
// Parses "key=value"; throws ConfigError when '=' is missing.
std::pair<std::string, std::string> parse_assignment(std::string_view text);

struct ExplainSettings {
  std::vector<std::string> methods{"gradshap"};
  std::vector<std::size_t> instances{0};  // rows of the test split
  std::vector<PlotKind> plots;
  std::size_t grid_size = 64;
  std::size_t background = 100;
  std::size_t n_int = 25;
  std::size_t n_samples = 0;
  std::size_t intgrad_steps = 64;
  std::string baseline = "mean";  // zeros | mean
  std::size_t permutations = 10;
  double noise = 0.1;
  std::size_t noise_samples = 50;
  std::size_t lime_neighbors = 1000;
  std::size_t force_points = 10;
};

struct BenchmarkSettings {
  std::vector<std::size_t> p{5, 10, 20};
  std::vector<std::size_t> n_int{5, 25, 50};
  std::size_t permutations = 10;
  std::size_t repetitions = 3;
  std::size_t instances = 100;
  std::size_t background = 50;
  std::size_t grid_size = 50;
  std::size_t train_epochs = 0;  // 0 keeps the training default
  ModelKind model = ModelKind::deepsurv;
};

struct ExperimentConfig {
  std::optional<std::string> preset;
  SimDesign design;  // resolved from the preset and design.* keys
  std::vector<ModelKind> models{ModelKind::deepsurv, ModelKind::coxtime, ModelKind::deephit};
  TrainConfig train;
  ExplainSettings explain;
  BenchmarkSettings benchmark;
  std::filesystem::path out = "survgrad_out";
  std::optional<std::filesystem::path> dataset;  // default: <out>/dataset.csv
  std::optional<std::size_t> test_n;             // default: design test_n, else n / 5
  std::uint64_t seed = 1;
  std::optional<std::size_t> threads;

  // Applies every key; unknown keys or malformed values throw ConfigError.
  static ExperimentConfig from_map(const ConfigMap& settings);
  void validate() const;
  nlohmann::json to_json() const;
};

// Exit statuses shared by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

// Subcommands. Progress goes to `log`; configuration problems throw
// ConfigError or IoError before anything is written.
void cmd_simulate(const ExperimentConfig& cfg, std::ostream& log);
void cmd_train(const ExperimentConfig& cfg, std::ostream& log);
void cmd_explain(const ExperimentConfig& cfg, std::ostream& log);
void cmd_benchmark(const ExperimentConfig& cfg, std::ostream& log);
void cmd_report(const ExperimentConfig& cfg, std::ostream& log);

// Markdown summary of whatever artifacts exist under `dir`.
std::string build_report(const std::filesystem::path& dir);

}  // namespace survgrad
