#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbrf/decompose.hpp"
#include "pbrf/solvers.hpp"

namespace pbrf {

enum class Mode { decompose, correlate, sweep, mislabel, influence_scores };

const char* to_string(Mode mode);

/// A validated experiment. `resolved` is the canonical JSON form with every
/// default filled in; parsing it again yields the same experiment.
struct ExperimentConfig {
  nlohmann::json resolved;
  Mode mode = Mode::decompose;
  NetworkSpec spec;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  ProtocolConfig protocol;
  InfluenceConfig influence;
  bool lissa_auto = false;
  std::vector<double> lissa_grid;
  double lissa_tolerance = 1e-3;
  std::string output_dir;
};

/// Throws configuration errors of the form "<field.path>: <problem>".
ExperimentConfig parse_config(const nlohmann::json& config);

/// Reads a config file. A run manifest is accepted too; its recorded config is
/// used.
nlohmann::json read_config_json(const std::string& path);

/// Replaces every seed in the config with one derived from `seed` and the
/// seed's field path.
void apply_seed_override(nlohmann::json& config, std::uint64_t seed);

/// Seeds of a resolved config, keyed by field path.
nlohmann::json collect_seeds(const nlohmann::json& resolved);

struct PreparedData {
  Dataset train;
  Dataset test;
  std::optional<CorruptionRecord> corruption;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

ExperimentSetup make_setup(const ExperimentConfig& cfg, const PreparedData& data, int jobs);

struct RunOptions {
  std::optional<std::string> out_dir;  // overrides output.dir
  int jobs = 1;
};

struct RunResult {
  std::string out_dir;
  std::vector<std::string> files;  // relative to out_dir, sorted
};

/// Runs the configured mode and writes all artifacts plus manifest.json. On
/// failure a FAILED file with the message is left beside partial outputs and
/// the error is rethrown.
RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options);

/// Picks the LiSSA scale for the configured model (base run trained first)
/// and writes lissa_tuning.csv and manifest.json.
LissaTuning tune_lissa(const ExperimentConfig& cfg, const RunOptions& options);

}  // namespace pbrf
