#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "aleatoric/data.hpp"
#include "aleatoric/network.hpp"
#include "aleatoric/training.hpp"

namespace aleatoric::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kTraining = 3, kEvaluation = 4 };

/// Everything a run depends on. One flat JSON object; every key has a
/// default (see defaults()) and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string schema;  // empty: bundled reference schema
  std::filesystem::path data_dir = "run/data";
  std::filesystem::path out_dir = "run";
  std::size_t threads = 0;  // 0: all available cores

  std::size_t patients = 10000;
  double positive_rate = 2797.0 / 21139.0;
  bool matrix_cache = false;

  std::vector<double> split{0.70, 0.15, 0.15};

  std::size_t ensemble = 5;
  std::string variant = "both";  // bayesian | benchmark | both
  std::size_t epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.001;
  std::size_t mc_samples = 100;
  std::size_t eval_mc_samples = 100;
  double w_bayes = 0.2;
  double w_ce = 1.0;
  bool class_weighting = false;
  std::size_t filters = 50;
  std::size_t kernel_width = 3;
  double keep_prob = 0.5;
  bool per_class_sigma = false;

  std::vector<double> retentions{0.9, 0.7, 0.5, 0.3, 0.1};
  double grid_baseline = 0.5;
  double grid_rescore = 1.0;
};

/// Default config as JSON, one entry per key.
nlohmann::json defaults();
/// Key descriptions, same keys as defaults().
const std::vector<std::pair<std::string, std::string>>& key_help();

nlohmann::json to_json(const RunConfig& config);
/// Overlays `overrides` on the defaults. Unknown keys and mistyped values
/// throw ConfigError.
RunConfig config_from_json(const nlohmann::json& overrides);
/// 16 hex digits of FNV-1a over the canonical JSON, `threads` left out since
/// it never changes a result.
std::string config_hash(const RunConfig& config);

// Derived pieces used by the commands (exposed for tests).
FeatureSchema load_run_schema(const RunConfig& config);
NetworkConfig network_config(const RunConfig& config, const FeatureSchema& schema);
TrainConfig train_config(const RunConfig& config);
SplitFractions split_fractions(const RunConfig& config);
std::uint64_t stream_seed(const RunConfig& config, const char* purpose);
std::vector<Variant> variants(const RunConfig& config);
std::filesystem::path events_path(const RunConfig& config);
std::filesystem::path labels_path(const RunConfig& config);
std::filesystem::path checkpoint_path(const RunConfig& config, Variant variant, std::size_t member);
std::filesystem::path reports_dir(const RunConfig& config);

// Commands. Each throws on failure; run() maps exceptions to exit codes.
void cmd_gen(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);
void cmd_noise_sweep(const RunConfig& config, std::ostream& log);
void cmd_grid_report(const RunConfig& config, std::ostream& log);

/// Entry point: args[0] is the program name, args[1] the subcommand.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aleatoric::cli
