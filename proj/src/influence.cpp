#include "pbrf/influence.hpp"

#include <cmath>

#include "pbrf/error.hpp"

namespace pbrf {

const char* to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::exact: return "exact";
    case SolverKind::cg: return "cg";
    case SolverKind::lissa: return "lissa";
  }
  return "unknown";
}

SolverKind solver_from_string(const std::string& name) {
  if (name == "exact") return SolverKind::exact;
  if (name == "cg") return SolverKind::cg;
  if (name == "lissa") return SolverKind::lissa;
  throw Error(ErrorKind::configuration, "unknown solver '" + name + "'");
}

void InfluenceConfig::validate() const {
  if (!(damping >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
  if (epsilon && !std::isfinite(*epsilon)) throw Error(ErrorKind::configuration, "epsilon must be finite");
  if (solver != SolverKind::exact && curvature == CurvatureKind::hessian && !(damping > 0.0))
    throw Error(ErrorKind::configuration, "iterative solvers on Hessian curvature need damping > 0");
  if (solver == SolverKind::lissa && !(lissa.scale > 0.0))
    throw Error(ErrorKind::configuration, "LiSSA scale must be positive");
}

namespace {

ParamVector gradient_at_rows(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                             const std::vector<int>& rows) {
  if (rows.empty()) return ParamVector::Zero(spec.param_count());
  const auto cache = kernel::forward(spec, params, data.batch_inputs(rows));
  return kernel::vjp(spec, params, cache,
                     loss_output_grads(spec.loss, cache.outputs(), data.batch_targets(rows, spec.loss)));
}

}  // namespace

InfluenceEngine::InfluenceEngine(ParamVector params, NetworkSpec spec, Dataset data, InfluenceConfig cfg)
    : params_(std::move(params)),
      spec_(std::move(spec)),
      data_(std::move(data)),
      cfg_(std::move(cfg)),
      op_((cfg_.validate(), CurvatureOperator::for_model(params_, spec_, data_, cfg_.curvature, cfg_.damping))) {
  if (cfg_.solver == SolverKind::exact) exact_ = std::make_shared<ExactSolver>(op_, cfg_.exact_cap);
}

double InfluenceEngine::epsilon() const { return cfg_.epsilon.value_or(1.0 / static_cast<double>(data_.size())); }

ParamVector InfluenceEngine::removed_gradient(const std::vector<std::int64_t>& ids) const {
  std::vector<int> rows;
  rows.reserve(ids.size());
  for (auto id : ids) rows.push_back(static_cast<int>(data_.row_of(id)));
  return gradient_at_rows(params_, spec_, data_, rows);
}

ParamVector InfluenceEngine::point_gradient(const Dataset& points, std::int64_t id) const {
  if (points.input_dim() != spec_.input_dim()) throw Error(ErrorKind::shape, "test point dimension mismatch");
  return gradient_at_rows(params_, spec_, points, {static_cast<int>(points.row_of(id))});
}

SolverReport InfluenceEngine::solve(const ParamVector& v) const {
  switch (cfg_.solver) {
    case SolverKind::exact:
      if (v.isZero(0.0)) {
        SolverReport rep;
        rep.solver = "exact";
        rep.solution = ParamVector::Zero(v.size());
        return rep;
      }
      return exact_->solve(v);
    case SolverKind::cg:
      return solve_cg(op_, v, cfg_.cg_max_iter, cfg_.cg_tol);
    case SolverKind::lissa:
      return solve_lissa(op_, v, cfg_.lissa, cfg_.jobs);
  }
  throw Error(ErrorKind::configuration, "unknown solver");
}

InfluenceEstimate InfluenceEngine::param_influence(const std::vector<std::int64_t>& removed) const {
  InfluenceEstimate est;
  est.removed = removed;
  const ParamVector g = removed_gradient(removed);
  const double eps = epsilon();
  if (eps == 0.0 || g.isZero(0.0)) {
    est.delta_params = ParamVector::Zero(g.size());
    est.report.solver = to_string(cfg_.solver);
    est.report.solution = est.delta_params;
    return est;
  }
  est.report = solve(g);
  est.delta_params = eps * est.report.solution;
  return est;
}

double InfluenceEngine::test_loss_influence(const std::vector<std::int64_t>& removed, const Dataset& test,
                                            std::int64_t test_id) const {
  const ParamVector g_test = point_gradient(test, test_id);
  if (g_test.isZero(0.0)) return 0.0;
  return g_test.dot(param_influence(removed).delta_params);
}

double InfluenceEngine::self_influence(std::int64_t id) const {
  const ParamVector g = removed_gradient({id});
  if (g.isZero(0.0)) return 0.0;
  return epsilon() * g.dot(solve(g).solution);
}

StestBatch InfluenceEngine::stest_batch(const Dataset& test, const std::vector<std::int64_t>& test_ids) const {
  StestBatch out;
  for (auto id : test_ids) {
    const ParamVector g = point_gradient(test, id);
    out.vectors[id] = g.isZero(0.0) ? ParamVector::Zero(g.size()) : solve(g).solution;
    ++out.solves;
  }
  return out;
}

double InfluenceEngine::score(const ParamVector& s_test, const std::vector<std::int64_t>& removed) const {
  return epsilon() * removed_gradient(removed).dot(s_test);
}

InfluenceEstimate param_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                                  const std::vector<std::int64_t>& removed, const InfluenceConfig& cfg) {
  return InfluenceEngine(params, spec, data, cfg).param_influence(removed);
}

double test_loss_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                           const std::vector<std::int64_t>& removed, const Dataset& test, std::int64_t test_id,
                           const InfluenceConfig& cfg) {
  return InfluenceEngine(params, spec, data, cfg).test_loss_influence(removed, test, test_id);
}

double self_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data, std::int64_t id,
                      const InfluenceConfig& cfg) {
  return InfluenceEngine(params, spec, data, cfg).self_influence(id);
}

}  // namespace pbrf
