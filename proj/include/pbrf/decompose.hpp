#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pbrf/data.hpp"
#include "pbrf/influence.hpp"
#include "pbrf/nn.hpp"
#include "pbrf/stats.hpp"
#include "pbrf/train.hpp"

namespace pbrf {

/// Mean over rows of ||f(a, x) - f(b, x)||.
double output_distance(const ParamVector& a, const ParamVector& b, const NetworkSpec& spec,
                       const Dataset& data);

enum class Term { warm_start_gap, proximity_gap, non_convergence_gap, linearization_error, solver_error };

inline constexpr std::array<Term, 5> kTerms = {Term::warm_start_gap, Term::proximity_gap,
                                               Term::non_convergence_gap, Term::linearization_error,
                                               Term::solver_error};

const char* to_string(Term term);

using TermValues = std::array<double, 5>;

struct TrialDecomposition {
  int trial = 0;
  std::vector<std::int64_t> removed;
  TermValues output_terms{};  // output-space distances between adjacent ladder rungs
  TermValues param_terms{};   // same pairs, parameter-space L2
  double cold_to_influence = 0.0;
  int solver_iterations = 0;
  double solver_residual = 0.0;
};

struct DecompositionReport {
  std::vector<TrialDecomposition> trials;
  std::array<MeanStd, 5> output_summary{};
  std::array<MeanStd, 5> param_summary{};
  std::map<std::string, std::string> metadata;

  const MeanStd& summary(Term term) const { return output_summary[static_cast<std::size_t>(term)]; }
};

/// Everything needed to run one experiment from a dataset onwards.
struct ExperimentSetup {
  NetworkSpec spec;
  Dataset train;
  Dataset test;  // may be empty when no test-loss quantities are requested
  TrainConfig train_config;
  std::uint64_t init_seed = 0;
  ProtocolConfig protocol;
  InfluenceConfig influence;  // damping and epsilon are taken from `protocol`
  int trials = 20;
  int removals_per_trial = 1;
  std::uint64_t removal_seed = 0;
  int jobs = 1;
};

/// Removal sets for each trial. Sets are disjoint while trials * per_trial <= N.
std::vector<std::vector<std::int64_t>> sample_removals(const Dataset& data, int trials, int per_trial,
                                                       std::uint64_t seed);

/// Influence settings aligned with the protocol (same damping and epsilon).
InfluenceConfig aligned_influence(const InfluenceConfig& cfg, const ProtocolConfig& protocol);

DecompositionReport decompose(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                              const std::vector<std::vector<std::int64_t>>& removals,
                              const ProtocolConfig& protocol, const InfluenceConfig& influence, int jobs = 1);

/// Trains the base run, samples removals and decomposes.
DecompositionReport decompose(const ExperimentSetup& setup);

enum class Baseline { cold, warm, pbrf, two_stage_loo, influence };

const char* to_string(Baseline baseline);

struct CorrelationRow {
  Baseline baseline = Baseline::cold;
  double pearson = 0.0;
  double spearman = 0.0;
  int n_points = 0;
};

/// One (removal, test point) pair. Deltas are test loss at the retrained
/// parameters minus test loss at theta^s.
struct CorrelationPoint {
  int trial = 0;
  std::int64_t test_id = 0;
  double influence = 0.0;
  std::map<Baseline, double> actual;
};

struct CorrelationResult {
  std::vector<CorrelationRow> rows;
  std::vector<CorrelationPoint> points;

  const CorrelationRow& row(Baseline baseline) const;
};

struct CorrelationOptions {
  std::vector<Baseline> baselines = {Baseline::cold, Baseline::warm, Baseline::pbrf, Baseline::two_stage_loo};
  bool sanity = false;  // adds an influence-vs-influence row
};

CorrelationResult correlation_table(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                                    const std::vector<std::vector<std::int64_t>>& removals, const Dataset& test,
                                    const std::vector<std::int64_t>& test_ids, const ProtocolConfig& protocol,
                                    const InfluenceConfig& influence, const CorrelationOptions& options = {},
                                    int jobs = 1);

/// theta^s + (warm retrain without `removed`) - (warm retrain on the full
/// data). Pass `full_retrain` to reuse the second run across calls.
ParamVector two_stage_loo(const BaseRun& base, const ProtocolConfig& protocol, const NetworkSpec& spec,
                          const Dataset& data, const std::vector<std::int64_t>& removed,
                          const ParamVector* full_retrain = nullptr);

/// Warm retrain on the full data, the reference run of two_stage_loo.
ParamVector full_data_retrain(const BaseRun& base, const ProtocolConfig& protocol, const NetworkSpec& spec,
                              const Dataset& data);

enum class MislabelScorer { influence_self, pbrf_self };

const char* to_string(MislabelScorer scorer);
MislabelScorer mislabel_scorer_from_string(const std::string& name);

struct CurvePoint {
  double inspected = 0.0;
  double recovered = 0.0;
};

/// Recall of `record.corrupted_ids` among the top ceil(q * N) examples by
/// score, at each q in `fractions`. Ties are broken by row order.
std::vector<CurvePoint> detection_curve(const std::vector<double>& scores, const Dataset& data,
                                        const CorruptionRecord& record, const std::vector<double>& fractions);

/// Per-example self scores. influence_self: self-influence at theta^s.
/// pbrf_self: loss change on the removed example after its PBRF run.
std::vector<double> self_scores(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                                MislabelScorer scorer, const ProtocolConfig& protocol,
                                const InfluenceConfig& influence, int jobs = 1);

std::vector<double> default_inspection_fractions();

std::vector<CurvePoint> mislabel_detection_curve(const BaseRun& base, const NetworkSpec& spec,
                                                 const Dataset& data, const CorruptionRecord& record,
                                                 MislabelScorer scorer, const ProtocolConfig& protocol,
                                                 const InfluenceConfig& influence,
                                                 const std::vector<double>& fractions, int jobs = 1);

enum class SweepFactor { width, depth, epochs, weight_decay, damping, removal_fraction };

const char* to_string(SweepFactor factor);
SweepFactor sweep_factor_from_string(const std::string& name);

struct SweepPoint {
  double value = 0.0;
  std::optional<DecompositionReport> report;
  std::string error;  // set when the point failed
};

/// Applies one grid value to a copy of the setup.
ExperimentSetup apply_factor(const ExperimentSetup& setup, SweepFactor factor, double value);

std::vector<SweepPoint> factor_sweep(SweepFactor factor, const std::vector<double>& grid,
                                     const ExperimentSetup& setup);

/// Spearman correlation between grid values and the mean of `term`, over the
/// points that succeeded.
double sweep_trend(const std::vector<SweepPoint>& points, Term term);

}  // namespace pbrf
