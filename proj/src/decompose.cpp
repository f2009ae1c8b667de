#include "pbrf/decompose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pbrf/error.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

double output_distance(const ParamVector& a, const ParamVector& b, const NetworkSpec& spec,
                       const Dataset& data) {
  data.require_nonempty();
  if (a.size() != spec.param_count() || b.size() != spec.param_count())
    throw Error(ErrorKind::shape, "parameter length does not match network");
  const Matrix X = data.all_inputs_columns();
  const Matrix diff = kernel::forward(spec, a, X).outputs() - kernel::forward(spec, b, X).outputs();
  return diff.colwise().norm().mean();
}

const char* to_string(Term term) {
  switch (term) {
    case Term::warm_start_gap: return "warm_start_gap";
    case Term::proximity_gap: return "proximity_gap";
    case Term::non_convergence_gap: return "non_convergence_gap";
    case Term::linearization_error: return "linearization_error";
    case Term::solver_error: return "solver_error";
  }
  return "unknown";
}

std::vector<std::vector<std::int64_t>> sample_removals(const Dataset& data, int trials, int per_trial,
                                                       std::uint64_t seed) {
  if (trials < 1) throw Error(ErrorKind::configuration, "trials must be >= 1");
  if (per_trial < 0 || per_trial > data.size())
    throw Error(ErrorKind::configuration, "removals per trial must lie in [0, N]");
  const auto& ids = data.ids();
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(trials));
  std::vector<std::size_t> perm(ids.size());
  std::iota(perm.begin(), perm.end(), 0);
  const bool disjoint = static_cast<Eigen::Index>(trials) * per_trial <= data.size();
  if (disjoint) {
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  for (int t = 0; t < trials; ++t) {
    std::size_t offset = 0;
    if (disjoint) {
      offset = static_cast<std::size_t>(t) * static_cast<std::size_t>(per_trial);
    } else {
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(fnv1a64_mix(seed, static_cast<std::uint64_t>(t)));
      std::shuffle(perm.begin(), perm.end(), rng);
    }
    auto& set = out[static_cast<std::size_t>(t)];
    for (int k = 0; k < per_trial; ++k) set.push_back(ids[perm[offset + static_cast<std::size_t>(k)]]);
    std::sort(set.begin(), set.end());
  }
  return out;
}

InfluenceConfig aligned_influence(const InfluenceConfig& cfg, const ProtocolConfig& protocol) {
  InfluenceConfig out = cfg;
  out.damping = protocol.damping;
  out.epsilon = protocol.epsilon;
  return out;
}

namespace {

std::array<MeanStd, 5> summarize(const std::vector<TrialDecomposition>& trials, bool output) {
  std::array<MeanStd, 5> out{};
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> xs;
    xs.reserve(trials.size());
    for (const auto& t : trials) xs.push_back(output ? t.output_terms[k] : t.param_terms[k]);
    out[k] = mean_std(xs);
  }
  return out;
}

}  // namespace

DecompositionReport decompose(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                              const std::vector<std::vector<std::int64_t>>& removals,
                              const ProtocolConfig& protocol, const InfluenceConfig& influence, int jobs) {
  data.require_nonempty();
  const auto anchor = make_anchor(base.params, spec, data);
  const InfluenceEngine engine(base.params, spec, data, aligned_influence(influence, protocol));

  DecompositionReport report;
  report.trials.resize(removals.size());
  parallel_for(jobs, static_cast<int>(removals.size()), [&](int t) {
    try {
      const auto& removed = removals[static_cast<std::size_t>(t)];
      const ResponseSet rs = six_way_protocol(base, protocol, spec, data, removed, anchor);
      const InfluenceEstimate est = engine.param_influence(removed);
      const ParamVector infl = base.params + est.delta_params;
      const std::array<const ParamVector*, 6> ladder = {&rs.cold, &rs.warm, &rs.proximal, &rs.pbrf,
                                                        &rs.linearized_pbrf, &infl};
      TrialDecomposition& out = report.trials[static_cast<std::size_t>(t)];
      out.trial = t;
      out.removed = removed;
      for (std::size_t k = 0; k < 5; ++k) {
        out.output_terms[k] = output_distance(*ladder[k], *ladder[k + 1], spec, data);
        out.param_terms[k] = (*ladder[k] - *ladder[k + 1]).norm();
      }
      out.cold_to_influence = output_distance(rs.cold, infl, spec, data);
      out.solver_iterations = est.report.iterations;
      out.solver_residual = est.report.residual_norm;
    } catch (const Error& e) {
      throw Error(e.kind(), "trial " + std::to_string(t) + ": " + e.what());
    }
  });
  report.output_summary = summarize(report.trials, true);
  report.param_summary = summarize(report.trials, false);
  report.metadata["base_init_seed"] = std::to_string(base.init_seed);
  report.metadata["base_epochs"] = std::to_string(base.config.epochs);
  report.metadata["base_batch_order_digest"] = hex64(base.result.batch_order_digest);
  report.metadata["retrain_epochs"] = std::to_string(retrain_epochs(base, protocol));
  report.metadata["retrain_seed"] = std::to_string(protocol.retrain_seed);
  report.metadata["damping"] = format_double(protocol.damping);
  report.metadata["epsilon"] = format_double(engine.epsilon());
  report.metadata["solver"] = to_string(influence.solver);
  report.metadata["curvature"] = to_string(influence.curvature);
  report.metadata["spec_hash"] = spec.hash();
  return report;
}

DecompositionReport decompose(const ExperimentSetup& setup) {
  const BaseRun base = train_base(setup.spec, setup.train, setup.train_config, setup.init_seed);
  const auto removals =
      sample_removals(setup.train, setup.trials, setup.removals_per_trial, setup.removal_seed);
  return decompose(base, setup.spec, setup.train, removals, setup.protocol, setup.influence, setup.jobs);
}

const char* to_string(Baseline baseline) {
  switch (baseline) {
    case Baseline::cold: return "cold";
    case Baseline::warm: return "warm";
    case Baseline::pbrf: return "pbrf";
    case Baseline::two_stage_loo: return "two_stage_loo";
    case Baseline::influence: return "influence";
  }
  return "unknown";
}

const CorrelationRow& CorrelationResult::row(Baseline baseline) const {
  for (const auto& r : rows)
    if (r.baseline == baseline) return r;
  throw Error(ErrorKind::lookup, std::string("no correlation row for ") + to_string(baseline));
}

namespace {

Vector test_losses(const ParamVector& params, const NetworkSpec& spec, const Dataset& test,
                   const std::vector<int>& rows) {
  const auto cache = kernel::forward(spec, params, test.batch_inputs(rows));
  return loss_values(spec.loss, cache.outputs(), test.batch_targets(rows, spec.loss));
}

}  // namespace

ParamVector full_data_retrain(const BaseRun& base, const ProtocolConfig& protocol, const NetworkSpec& spec,
                              const Dataset& data) {
  return protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, data, {});
}

ParamVector two_stage_loo(const BaseRun& base, const ProtocolConfig& protocol, const NetworkSpec& spec,
                          const Dataset& data, const std::vector<std::int64_t>& removed,
                          const ParamVector* full_retrain) {
  if (removed.empty()) return base.params;
  ParamVector full;
  if (!full_retrain) {
    full = full_data_retrain(base, protocol, spec, data);
    full_retrain = &full;
  }
  const ParamVector without = protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, data, removed);
  return base.params + (without - *full_retrain);
}

CorrelationResult correlation_table(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                                    const std::vector<std::vector<std::int64_t>>& removals, const Dataset& test,
                                    const std::vector<std::int64_t>& test_ids, const ProtocolConfig& protocol,
                                    const InfluenceConfig& influence, const CorrelationOptions& options,
                                    int jobs) {
  data.require_nonempty();
  test.require_nonempty();
  if (test_ids.empty()) throw Error(ErrorKind::configuration, "correlation needs at least one test point");
  std::vector<int> test_rows;
  for (auto id : test_ids) test_rows.push_back(static_cast<int>(test.row_of(id)));

  const auto has = [&](Baseline b) {
    return std::find(options.baselines.begin(), options.baselines.end(), b) != options.baselines.end();
  };
  const bool need_warm = has(Baseline::warm) || has(Baseline::two_stage_loo);
  const auto anchor = has(Baseline::pbrf) ? make_anchor(base.params, spec, data) : nullptr;
  const InfluenceEngine engine(base.params, spec, data, aligned_influence(influence, protocol));
  const StestBatch stest = engine.stest_batch(test, test_ids);
  const Vector base_losses = test_losses(base.params, spec, test, test_rows);
  ParamVector full_retrain;
  if (has(Baseline::two_stage_loo)) full_retrain = full_data_retrain(base, protocol, spec, data);

  const std::size_t n_tests = test_ids.size();
  std::vector<CorrelationPoint> points(removals.size() * n_tests);
  parallel_for(jobs, static_cast<int>(removals.size()), [&](int t) {
    try {
      const auto& removed = removals[static_cast<std::size_t>(t)];
      std::map<Baseline, Vector> deltas;
      auto record = [&](Baseline b, const ParamVector& params) {
        deltas[b] = test_losses(params, spec, test, test_rows) - base_losses;
      };
      if (has(Baseline::cold))
        record(Baseline::cold, protocol_run(ObjectiveTag::cold_downweighted, base, protocol, spec, data, removed));
      if (need_warm) {
        const ParamVector warm = protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, data, removed);
        if (has(Baseline::warm)) record(Baseline::warm, warm);
        if (has(Baseline::two_stage_loo))
          record(Baseline::two_stage_loo,
                 removed.empty() ? base.params : ParamVector(base.params + (warm - full_retrain)));
      }
      if (has(Baseline::pbrf))
        record(Baseline::pbrf,
               protocol_run(ObjectiveTag::proximal_bregman, base, protocol, spec, data, removed, anchor));
      const ParamVector g = engine.removed_gradient(removed);
      for (std::size_t j = 0; j < n_tests; ++j) {
        CorrelationPoint& p = points[static_cast<std::size_t>(t) * n_tests + j];
        p.trial = t;
        p.test_id = test_ids[j];
        p.influence = engine.epsilon() * g.dot(stest.vectors.at(test_ids[j]));
        for (const auto& [b, d] : deltas) p.actual[b] = d(static_cast<Eigen::Index>(j));
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "trial " + std::to_string(t) + ": " + e.what());
    }
  });

  CorrelationResult result;
  std::vector<double> predicted;
  for (const auto& p : points) predicted.push_back(p.influence);
  auto add_row = [&](Baseline b, const std::vector<double>& actual) {
    CorrelationRow row;
    row.baseline = b;
    row.n_points = static_cast<int>(actual.size());
    row.pearson = pearson(predicted, actual);
    row.spearman = spearman(predicted, actual);
    result.rows.push_back(row);
  };
  for (Baseline b : options.baselines) {
    if (b == Baseline::influence) continue;
    std::vector<double> actual;
    for (const auto& p : points) actual.push_back(p.actual.at(b));
    add_row(b, actual);
  }
  if (options.sanity) add_row(Baseline::influence, predicted);
  result.points = std::move(points);
  return result;
}

const char* to_string(MislabelScorer scorer) {
  switch (scorer) {
    case MislabelScorer::influence_self: return "influence_self";
    case MislabelScorer::pbrf_self: return "pbrf_self";
  }
  return "unknown";
}

MislabelScorer mislabel_scorer_from_string(const std::string& name) {
  if (name == "influence_self") return MislabelScorer::influence_self;
  if (name == "pbrf_self") return MislabelScorer::pbrf_self;
  throw Error(ErrorKind::configuration, "unknown scorer '" + name + "'");
}

std::vector<double> default_inspection_fractions() {
  std::vector<double> out;
  for (int k = 1; k <= 20; ++k) out.push_back(k / 20.0);
  return out;
}

std::vector<CurvePoint> detection_curve(const std::vector<double>& scores, const Dataset& data,
                                        const CorruptionRecord& record, const std::vector<double>& fractions) {
  const auto n = static_cast<std::size_t>(data.size());
  if (scores.size() != n) throw Error(ErrorKind::shape, "one score per training example is required");
  for (auto id : record.corrupted_ids) data.row_of(id);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<char> corrupted(n, 0);
  for (auto id : record.corrupted_ids) corrupted[static_cast<std::size_t>(data.row_of(id))] = 1;
  std::vector<std::size_t> found_at(n + 1, 0);  // corrupted rows among the first k ranked
  for (std::size_t k = 0; k < n; ++k) found_at[k + 1] = found_at[k] + static_cast<std::size_t>(corrupted[order[k]]);

  const double total = static_cast<double>(record.corrupted_ids.size());
  std::vector<CurvePoint> curve;
  for (double q : fractions) {
    if (!(q >= 0.0 && q <= 1.0)) throw Error(ErrorKind::configuration, "inspection fractions must lie in [0, 1]");
    const auto k = std::min(n, static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9)));
    CurvePoint p;
    p.inspected = q;
    p.recovered = total == 0.0 ? 1.0 : static_cast<double>(found_at[k]) / total;
    curve.push_back(p);
  }
  return curve;
}

std::vector<double> self_scores(const BaseRun& base, const NetworkSpec& spec, const Dataset& data,
                                MislabelScorer scorer, const ProtocolConfig& protocol,
                                const InfluenceConfig& influence, int jobs) {
  const auto n = static_cast<int>(data.size());
  std::vector<double> scores(static_cast<std::size_t>(n));
  const auto& ids = data.ids();
  if (scorer == MislabelScorer::influence_self) {
    const InfluenceEngine engine(base.params, spec, data, aligned_influence(influence, protocol));
    parallel_for(jobs, n, [&](int i) { scores[static_cast<std::size_t>(i)] = engine.self_influence(ids[static_cast<std::size_t>(i)]); });
    return scores;
  }
  const auto anchor = make_anchor(base.params, spec, data);
  const Vector base_losses = loss_values(spec.loss, anchor->cache.outputs(), data.all_targets(spec.loss));
  parallel_for(jobs, n, [&](int i) {
    const std::int64_t id = ids[static_cast<std::size_t>(i)];
    const ParamVector p = protocol_run(ObjectiveTag::proximal_bregman, base, protocol, spec, data, {id}, anchor);
    const std::vector<int> row = {i};
    const auto cache = kernel::forward(spec, p, data.batch_inputs(row));
    scores[static_cast<std::size_t>(i)] =
        loss_values(spec.loss, cache.outputs(), data.batch_targets(row, spec.loss))(0) - base_losses(i);
  });
  return scores;
}

std::vector<CurvePoint> mislabel_detection_curve(const BaseRun& base, const NetworkSpec& spec,
                                                 const Dataset& data, const CorruptionRecord& record,
                                                 MislabelScorer scorer, const ProtocolConfig& protocol,
                                                 const InfluenceConfig& influence,
                                                 const std::vector<double>& fractions, int jobs) {
  const auto scores = self_scores(base, spec, data, scorer, protocol, influence, jobs);
  return detection_curve(scores, data, record, fractions);
}

const char* to_string(SweepFactor factor) {
  switch (factor) {
    case SweepFactor::width: return "width";
    case SweepFactor::depth: return "depth";
    case SweepFactor::epochs: return "epochs";
    case SweepFactor::weight_decay: return "weight_decay";
    case SweepFactor::damping: return "damping";
    case SweepFactor::removal_fraction: return "removal_fraction";
  }
  return "unknown";
}

SweepFactor sweep_factor_from_string(const std::string& name) {
  for (auto f : {SweepFactor::width, SweepFactor::depth, SweepFactor::epochs, SweepFactor::weight_decay,
                 SweepFactor::damping, SweepFactor::removal_fraction})
    if (name == to_string(f)) return f;
  throw Error(ErrorKind::configuration, "unknown sweep factor '" + name + "'");
}

namespace {

int positive_int(double value, const char* what) {
  const double r = std::round(value);
  if (r < 1.0 || std::abs(r - value) > 1e-9)
    throw Error(ErrorKind::configuration, std::string(what) + " must be a positive integer");
  return static_cast<int>(r);
}

}  // namespace

ExperimentSetup apply_factor(const ExperimentSetup& setup, SweepFactor factor, double value) {
  ExperimentSetup out = setup;
  auto& widths = out.spec.layer_widths;
  switch (factor) {
    case SweepFactor::width: {
      if (widths.size() < 3) throw Error(ErrorKind::configuration, "width sweep needs a hidden layer");
      const int w = positive_int(value, "width");
      for (std::size_t i = 1; i + 1 < widths.size(); ++i) widths[i] = w;
      break;
    }
    case SweepFactor::depth: {
      if (widths.size() < 3) throw Error(ErrorKind::configuration, "depth sweep needs a hidden layer");
      const int depth = positive_int(value, "depth");
      const int w = widths[1];
      const Activation act = out.spec.activations.front();
      widths = {widths.front()};
      for (int i = 0; i < depth; ++i) widths.push_back(w);
      widths.push_back(setup.spec.layer_widths.back());
      out.spec.activations.assign(static_cast<std::size_t>(depth), act);
      break;
    }
    case SweepFactor::epochs:
      out.train_config.epochs = positive_int(value, "epochs");
      break;
    case SweepFactor::weight_decay:
      if (!(value >= 0.0)) throw Error(ErrorKind::configuration, "weight decay must be nonnegative");
      out.spec.l2_strength = value;
      break;
    case SweepFactor::damping:
      if (!(value >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
      out.protocol.damping = value;
      break;
    case SweepFactor::removal_fraction:
      if (!(value > 0.0 && value <= 1.0)) throw Error(ErrorKind::configuration, "removal fraction must lie in (0, 1]");
      out.removals_per_trial =
          std::max(1, static_cast<int>(std::lround(value * static_cast<double>(setup.train.size()))));
      break;
  }
  out.spec.validate();
  return out;
}

std::vector<SweepPoint> factor_sweep(SweepFactor factor, const std::vector<double>& grid,
                                     const ExperimentSetup& setup) {
  if (grid.empty()) throw Error(ErrorKind::configuration, "sweep grid is empty");
  std::vector<SweepPoint> points(grid.size());
  const int outer = std::max(1, std::min(setup.jobs, static_cast<int>(grid.size())));
  const int inner = std::max(1, setup.jobs / outer);
  parallel_for(outer, static_cast<int>(grid.size()), [&](int i) {
    SweepPoint& p = points[static_cast<std::size_t>(i)];
    p.value = grid[static_cast<std::size_t>(i)];
    try {
      ExperimentSetup s = apply_factor(setup, factor, p.value);
      s.jobs = inner;
      p.report = decompose(s);
    } catch (const std::exception& e) {
      p.error = e.what();
    }
  });
  return points;
}

double sweep_trend(const std::vector<SweepPoint>& points, Term term) {
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    if (!p.report) continue;
    xs.push_back(p.value);
    ys.push_back(p.report->summary(term).mean);
  }
  return spearman(xs, ys);
}

}  // namespace pbrf
