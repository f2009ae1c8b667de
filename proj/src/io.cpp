#include "pbrf/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pbrf/error.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

using nlohmann::json;

namespace {

constexpr const char* kParamFormat = "pbrf-params-v1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint64_t to_le(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::little) return x;
  std::uint64_t y = 0;
  for (int i = 0; i < 8; ++i) y |= ((x >> (8 * i)) & 0xff) << (8 * (7 - i));
  return y;
}

}  // namespace

void write_file(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot open '" + tmp + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorKind::io, "write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw Error(ErrorKind::io, "cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_params(const std::string& path, const ParamVector& params, const NetworkSpec& spec) {
  if (params.size() != spec.param_count()) throw Error(ErrorKind::shape, "parameter length does not match network");
  json header = {{"format", kParamFormat},
                 {"length", params.size()},
                 {"spec_hash", spec.hash()},
                 {"dtype", "f64le"}};
  std::string out = header.dump() + "\n";
  const std::size_t offset = out.size();
  out.resize(offset + 8 * static_cast<std::size_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(params(i)));
    std::memcpy(out.data() + offset + 8 * static_cast<std::size_t>(i), &bits, 8);
  }
  write_file(path, out);
}

ParamVector load_params(const std::string& path, const NetworkSpec* spec) {
  const std::string bytes = read_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error(ErrorKind::io, "'" + path + "' has no header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::io, "'" + path + "' header is not JSON: " + e.what());
  }
  if (header.value("format", "") != kParamFormat || header.value("dtype", "") != "f64le")
    throw Error(ErrorKind::io, "'" + path + "' is not a parameter file");
  const auto length = header.at("length").get<std::int64_t>();
  if (length < 0 || bytes.size() - nl - 1 != static_cast<std::size_t>(length) * 8)
    throw Error(ErrorKind::io, "'" + path + "' payload does not match its declared length");
  if (spec) {
    if (header.value("spec_hash", "") != spec->hash())
      throw Error(ErrorKind::io, "'" + path + "' was saved for a different network");
    if (length != spec->param_count()) throw Error(ErrorKind::shape, "'" + path + "' has the wrong length");
  }
  ParamVector params(length);
  for (std::int64_t i = 0; i < length; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + nl + 1 + 8 * static_cast<std::size_t>(i), 8);
    params(i) = std::bit_cast<double>(to_le(bits));
  }
  return params;
}

json to_json(const NetworkSpec& spec) {
  json acts = json::array();
  for (auto a : spec.activations) acts.push_back(to_string(a));
  return {{"layer_widths", spec.layer_widths},
          {"activations", acts},
          {"loss", to_string(spec.loss)},
          {"l2", spec.l2_strength}};
}

json to_json(const TrainConfig& cfg) {
  json decay = json::array();
  for (const auto& m : cfg.lr_decay) decay.push_back({{"epoch", m.epoch}, {"factor", m.factor}});
  json batch = cfg.batch_size == 0 ? json("full") : json(cfg.batch_size);
  return {{"optimizer", to_string(cfg.optimizer)},
          {"learning_rate", cfg.learning_rate},
          {"momentum", cfg.momentum},
          {"batch_size", batch},
          {"epochs", cfg.epochs},
          {"seed", cfg.seed},
          {"lr_decay", decay},
          {"grad_tol", cfg.grad_tol}};
}

json run_metadata(const BaseRun& base) {
  json lr = json::array();  // (epoch, lr) wherever the rate changes
  for (int e = 0; e < base.config.epochs; ++e)
    if (e == 0 || base.config.lr_at(e) != base.config.lr_at(e - 1)) lr.push_back({{"epoch", e}, {"lr", base.config.lr_at(e)}});
  return {{"init_seed", base.init_seed},
          {"init", "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))"},
          {"train", to_json(base.config)},
          {"epochs_run", base.result.epochs_run},
          {"batch_order_digest", hex64(base.result.batch_order_digest)},
          {"final_cost", base.result.epoch_costs.empty() ? 0.0 : base.result.epoch_costs.back()},
          {"final_grad_norm", base.result.final_grad_norm},
          {"lr_schedule", lr}};
}

json to_json(const SolverReport& report, const std::string& solution_file) {
  json cfg = json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  return {{"solver", report.solver},
          {"iterations", report.iterations},
          {"residual_norm", report.residual_norm},
          {"config", cfg},
          {"solution_file", solution_file}};
}

json to_json(const DecompositionReport& report) {
  json terms = json::object();
  for (auto t : kTerms) {
    const auto k = static_cast<std::size_t>(t);
    terms[to_string(t)] = {{"mean", report.output_summary[k].mean},
                           {"std", report.output_summary[k].std},
                           {"param_l2_mean", report.param_summary[k].mean},
                           {"param_l2_std", report.param_summary[k].std}};
  }
  json trials = json::array();
  for (const auto& tr : report.trials) {
    json out = json::object(), par = json::object();
    for (auto t : kTerms) {
      out[to_string(t)] = tr.output_terms[static_cast<std::size_t>(t)];
      par[to_string(t)] = tr.param_terms[static_cast<std::size_t>(t)];
    }
    trials.push_back({{"trial", tr.trial},
                      {"removed", tr.removed},
                      {"output", out},
                      {"param_l2", par},
                      {"cold_to_influence", tr.cold_to_influence},
                      {"solver_iterations", tr.solver_iterations},
                      {"solver_residual", tr.solver_residual}});
  }
  json meta = json::object();
  for (const auto& [k, v] : report.metadata) meta[k] = v;
  return {{"terms", terms}, {"trials", trials}, {"metadata", meta}};
}

namespace {

std::string fd(double x) { return format_double(x); }

}  // namespace

std::string decomposition_csv(const DecompositionReport& report) {
  std::string out;
  for (std::size_t k = 0; k < kTerms.size(); ++k) out += std::string(k ? "," : "") + to_string(kTerms[k]);
  out += "\n";
  for (const auto& tr : report.trials) {
    for (std::size_t k = 0; k < 5; ++k) out += (k ? "," : "") + fd(tr.output_terms[k]);
    out += "\n";
  }
  return out;
}

std::string decomposition_long_csv(const DecompositionReport& report) {
  std::string out = "trial,term,value\n";
  for (const auto& tr : report.trials)
    for (auto t : kTerms)
      out += std::to_string(tr.trial) + "," + to_string(t) + "," + fd(tr.output_terms[static_cast<std::size_t>(t)]) + "\n";
  return out;
}

std::string sweep_csv(SweepFactor factor, const std::vector<SweepPoint>& points) {
  std::string out = "factor,factor_value,trial,term,value\n";
  for (const auto& p : points) {
    if (!p.report) continue;
    for (const auto& tr : p.report->trials)
      for (auto t : kTerms)
        out += std::string(to_string(factor)) + "," + fd(p.value) + "," + std::to_string(tr.trial) + "," +
               to_string(t) + "," + fd(tr.output_terms[static_cast<std::size_t>(t)]) + "\n";
  }
  return out;
}

std::string correlation_csv(const CorrelationResult& result) {
  std::string out = "baseline,pearson,spearman,n_points\n";
  for (const auto& r : result.rows)
    out += std::string(to_string(r.baseline)) + "," + fd(r.pearson) + "," + fd(r.spearman) + "," +
           std::to_string(r.n_points) + "\n";
  return out;
}

std::string correlation_points_csv(const CorrelationResult& result) {
  std::vector<Baseline> cols;
  if (!result.points.empty())
    for (const auto& [b, v] : result.points.front().actual) cols.push_back(b);
  std::string out = "trial,test_id,influence";
  for (auto b : cols) out += std::string(",") + to_string(b);
  out += "\n";
  for (const auto& p : result.points) {
    out += std::to_string(p.trial) + "," + std::to_string(p.test_id) + "," + fd(p.influence);
    for (auto b : cols) out += "," + fd(p.actual.at(b));
    out += "\n";
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "fraction_inspected,fraction_recovered\n";
  for (const auto& p : curve) out += fd(p.inspected) + "," + fd(p.recovered) + "\n";
  return out;
}

std::string influence_scores_csv(const std::vector<ScoreRow>& rows, const InfluenceConfig& cfg, double epsilon) {
  std::string out = "train_id,test_id,score,solver,curvature,lambda,epsilon\n";
  const std::string tail = std::string(",") + to_string(cfg.solver) + "," + to_string(cfg.curvature) + "," +
                           fd(cfg.damping) + "," + fd(epsilon) + "\n";
  for (const auto& r : rows)
    out += std::to_string(r.train_id) + "," + std::to_string(r.test_id) + "," + fd(r.score) + tail;
  return out;
}

}  // namespace pbrf
