#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbrf/decompose.hpp"
#include "pbrf/solvers.hpp"
#include "pbrf/train.hpp"

namespace pbrf {

// Parameter files: one line of JSON ({"format", "length", "spec_hash",
// "dtype"}) terminated by '\n', then `length` little-endian float64 values.
void save_params(const std::string& path, const ParamVector& params, const NetworkSpec& spec);
/// Throws an io error on a malformed file, or when `spec` is given and its
/// hash or parameter count differs from the header.
ParamVector load_params(const std::string& path, const NetworkSpec* spec = nullptr);

nlohmann::json to_json(const NetworkSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json run_metadata(const BaseRun& base);
nlohmann::json to_json(const SolverReport& report, const std::string& solution_file);
nlohmann::json to_json(const DecompositionReport& report);

/// Writes `content` to `path` via a temporary file and rename.
void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// Tabular outputs. Every double goes through format_double so identical runs
// give identical bytes.
std::string decomposition_csv(const DecompositionReport& report);       // one row per trial, 5 term columns
std::string decomposition_long_csv(const DecompositionReport& report);  // trial,term,value
std::string sweep_csv(SweepFactor factor, const std::vector<SweepPoint>& points);
std::string correlation_csv(const CorrelationResult& result);
std::string correlation_points_csv(const CorrelationResult& result);
std::string curve_csv(const std::vector<CurvePoint>& curve);

struct ScoreRow {
  std::int64_t train_id = 0;
  std::int64_t test_id = 0;
  double score = 0.0;
};

std::string influence_scores_csv(const std::vector<ScoreRow>& rows, const InfluenceConfig& cfg, double epsilon);

}  // namespace pbrf
