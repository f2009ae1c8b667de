#include "pbrf/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <deque>
#include <numeric>
#include <random>

#include "pbrf/error.hpp"
#include "pbrf/objective.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

const char* to_string(CurvatureKind kind) { return kind == CurvatureKind::hessian ? "hessian" : "gnh"; }

CurvatureKind curvature_from_string(const std::string& name) {
  if (name == "hessian") return CurvatureKind::hessian;
  if (name == "gnh") return CurvatureKind::gnh;
  throw Error(ErrorKind::configuration, "unknown curvature '" + name + "'");
}

CurvatureOperator::CurvatureOperator(FullApply curvature, Eigen::Index dim, CurvatureKind kind, double damping)
    : full_(std::move(curvature)), dim_(dim), kind_(kind), damping_(damping) {
  if (!(damping >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
}

CurvatureOperator::CurvatureOperator(RowApply curvature_rows, int num_rows, Eigen::Index dim, CurvatureKind kind,
                                     double damping)
    : rows_(std::move(curvature_rows)), num_rows_(num_rows), dim_(dim), kind_(kind), damping_(damping) {
  if (!(damping >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
  if (num_rows < 1) throw Error(ErrorKind::empty_data, "curvature operator over zero rows");
}

CurvatureOperator CurvatureOperator::from_matrix(const Matrix& C, double damping, CurvatureKind kind) {
  if (C.rows() != C.cols()) throw Error(ErrorKind::shape, "curvature matrix must be square");
  return CurvatureOperator([C](const ParamVector& v) -> ParamVector { return C * v; }, C.rows(), kind, damping);
}

namespace {

struct ModelState {
  NetworkSpec spec;
  ParamVector params;
  kernel::ForwardCache cache;
  TargetBatch all_targets;
  Dataset data_copy;
};

bool is_all_rows(std::span<const int> rows, int n) {
  if (static_cast<int>(rows.size()) != n) return false;
  for (int i = 0; i < n; ++i)
    if (rows[i] != i) return false;
  return true;
}

}  // namespace

CurvatureOperator CurvatureOperator::for_model(const ParamVector& params, const NetworkSpec& spec,
                                               const Dataset& data, CurvatureKind kind, double damping) {
  spec.validate();
  data.require_nonempty();
  if (params.size() != spec.param_count()) throw Error(ErrorKind::shape, "parameter length does not match network");
  auto state = std::make_shared<ModelState>();
  state->spec = spec;
  state->params = params;
  state->cache = kernel::forward(spec, params, data.all_inputs_columns());
  if (kind == CurvatureKind::hessian) {
    state->data_copy = data;
    state->all_targets = data.all_targets(spec.loss);
  }
  const int n = static_cast<int>(data.size());
  RowApply apply = [state, kind, n](const ParamVector& v, std::span<const int> rows) -> ParamVector {
    const NetworkSpec& sp = state->spec;
    const bool full = is_all_rows(rows, n);
    ParamVector sum;
    if (full) {
      sum = kind == CurvatureKind::gnh
                ? kernel::gnh_sum(sp, state->params, state->cache, v)
                : kernel::hessian_sum(sp, state->params, state->cache, state->all_targets, v);
    } else {
      const auto cache = kernel::slice(state->cache, rows);
      sum = kind == CurvatureKind::gnh
                ? kernel::gnh_sum(sp, state->params, cache, v)
                : kernel::hessian_sum(sp, state->params, cache, state->data_copy.batch_targets(rows, sp.loss), v);
    }
    return sum / static_cast<double>(rows.size()) + sp.l2_strength * v;
  };
  return CurvatureOperator(std::move(apply), n, spec.param_count(), kind, damping);
}

ParamVector CurvatureOperator::apply(const ParamVector& v) const {
  if (v.size() != dim_) throw Error(ErrorKind::shape, "vector length does not match operator");
  ++*count_;
  if (rows_) {
    std::vector<int> all(static_cast<std::size_t>(num_rows_));
    std::iota(all.begin(), all.end(), 0);
    return rows_(v, all) + damping_ * v;
  }
  return full_(v) + damping_ * v;
}

ParamVector CurvatureOperator::apply_rows(const ParamVector& v, std::span<const int> rows) const {
  if (!rows_) return apply(v);
  if (v.size() != dim_) throw Error(ErrorKind::shape, "vector length does not match operator");
  ++*count_;
  return rows_(v, rows) + damping_ * v;
}

namespace {

Matrix materialize(const CurvatureOperator& op) {
  const Eigen::Index d = op.dim();
  Matrix A(d, d);
  ParamVector e = ParamVector::Zero(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    e(i) = 1.0;
    A.col(i) = op.apply(e);
    e(i) = 0.0;
  }
  return 0.5 * (A + A.transpose());
}

}  // namespace

ExactSolver::ExactSolver(const CurvatureOperator& op, Eigen::Index cap) : op_(op) {
  if (op.dim() > cap)
    throw Error(ErrorKind::configuration, "exact solve needs d <= " + std::to_string(cap) + ", got " +
                                              std::to_string(op.dim()));
  const Matrix A = materialize(op);
  llt_.compute(A);
  if (llt_.info() == Eigen::Success) {
    const Vector diag = llt_.matrixLLT().diagonal();
    const double lo = diag.minCoeff(), hi = diag.maxCoeff();
    use_llt_ = lo > 0.0 && (lo * lo) > 1e-14 * (hi * hi);
  }
  if (use_llt_) {
    min_eig_ = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(A);
  eigvals_ = eig.eigenvalues();
  eigvecs_ = eig.eigenvectors();
  min_eig_ = eigvals_.minCoeff();
  const double scale = std::max(1.0, eigvals_.cwiseAbs().maxCoeff());
  if (eigvals_.cwiseAbs().minCoeff() <= 1e-12 * scale) {
    const Eigen::Index k = [&] {
      Eigen::Index idx;
      eigvals_.cwiseAbs().minCoeff(&idx);
      return idx;
    }();
    throw Error(ErrorKind::singularity, "damped curvature is singular; smallest eigenvalue " +
                                            format_double(eigvals_(k)) + " (increase damping)");
  }
}

SolverReport ExactSolver::solve(const ParamVector& v) const {
  if (v.size() != op_.dim()) throw Error(ErrorKind::shape, "vector length does not match operator");
  SolverReport rep;
  rep.solver = "exact";
  rep.config["damping"] = op_.damping();
  if (use_llt_) {
    rep.solution = llt_.solve(v);
  } else {
    rep.solution = eigvecs_ * ((eigvecs_.transpose() * v).array() / eigvals_.array()).matrix();
  }
  rep.iterations = 1;
  rep.residual_norm = (op_.apply(rep.solution) - v).norm();
  return rep;
}

SolverReport solve_exact(const CurvatureOperator& op, const ParamVector& v, Eigen::Index cap) {
  if (v.size() != op.dim()) throw Error(ErrorKind::shape, "vector length does not match operator");
  if (v.isZero(0.0)) {
    SolverReport rep;
    rep.solver = "exact";
    rep.config["damping"] = op.damping();
    rep.solution = ParamVector::Zero(v.size());
    return rep;
  }
  return ExactSolver(op, cap).solve(v);
}

SolverReport solve_cg(const CurvatureOperator& op, const ParamVector& v, int max_iter, double tol) {
  if (v.size() != op.dim()) throw Error(ErrorKind::shape, "vector length does not match operator");
  if (max_iter <= 0) max_iter = static_cast<int>(op.dim());
  SolverReport rep;
  rep.solver = "cg";
  rep.config["damping"] = op.damping();
  rep.config["max_iter"] = max_iter;
  rep.config["tol"] = tol;
  ParamVector x = ParamVector::Zero(v.size());
  const double vnorm = v.norm();
  if (vnorm == 0.0) {
    rep.solution = x;
    return rep;
  }
  ParamVector r = v;
  ParamVector p = r;
  double rs = r.squaredNorm();
  int k = 0;
  while (k < max_iter) {
    const ParamVector Ap = op.apply(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0))
      throw Error(ErrorKind::indefinite, "p^T A p = " + format_double(pAp) + " at CG iteration " + std::to_string(k) +
                                             "; operator is not positive definite (increase damping)");
    const double alpha = rs / pAp;
    x += alpha * p;
    r -= alpha * Ap;
    const double rs_new = r.squaredNorm();
    ++k;
    if (std::sqrt(rs_new) <= tol * vnorm) break;
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  rep.iterations = k;
  rep.solution = std::move(x);
  rep.residual_norm = (op.apply(rep.solution) - v).norm();
  return rep;
}

namespace {

ParamVector lissa_single(const CurvatureOperator& op, const ParamVector& v, const LissaParams& prm,
                         std::uint64_t stream) {
  const bool stochastic = prm.batch_size > 0 && op.has_rows() && prm.batch_size < op.num_rows();
  std::mt19937_64 rng(stream);
  std::vector<int> pool;
  if (stochastic) {
    pool.resize(static_cast<std::size_t>(op.num_rows()));
    std::iota(pool.begin(), pool.end(), 0);
  }
  std::vector<int> batch(stochastic ? static_cast<std::size_t>(prm.batch_size) : 0);
  const double inv_scale = 1.0 / prm.scale;

  ParamVector r = v;
  std::deque<double> norms{r.norm()};
  for (int t = 1; t <= prm.depth; ++t) {
    ParamVector Ar;
    if (stochastic) {
      // Partial Fisher-Yates draw without replacement.
      for (int i = 0; i < prm.batch_size; ++i) {
        std::uniform_int_distribution<int> pick(i, op.num_rows() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      std::copy(pool.begin(), pool.begin() + prm.batch_size, batch.begin());
      std::sort(batch.begin(), batch.end());
      Ar = op.apply_rows(r, batch);
    } else {
      Ar = op.apply(r);
    }
    r = v + r - inv_scale * Ar;
    const double nr = r.norm();
    if (!std::isfinite(nr))
      throw Error(ErrorKind::scale_too_small, "LiSSA recursion overflowed at step " + std::to_string(t) +
                                                  " with scale " + format_double(prm.scale));
    norms.push_back(nr);
    if (norms.size() > 11) norms.pop_front();
    if (t > 10 && norms.front() > 0.0 && nr >= 10.0 * norms.front())
      throw Error(ErrorKind::scale_too_small, "LiSSA recursion grew " + format_double(nr / norms.front()) +
                                                  "x over 10 steps at step " + std::to_string(t) + " with scale " +
                                                  format_double(prm.scale));
  }
  return inv_scale * r;
}

}  // namespace

SolverReport solve_lissa(const CurvatureOperator& op, const ParamVector& v, const LissaParams& prm, int jobs) {
  if (v.size() != op.dim()) throw Error(ErrorKind::shape, "vector length does not match operator");
  if (!(prm.scale > 0.0)) throw Error(ErrorKind::configuration, "LiSSA scale must be positive");
  if (prm.depth < 0 || prm.repeats < 1) throw Error(ErrorKind::configuration, "LiSSA needs depth >= 0, repeats >= 1");
  SolverReport rep;
  rep.solver = "lissa";
  rep.config["damping"] = op.damping();
  rep.config["depth"] = prm.depth;
  rep.config["repeats"] = prm.repeats;
  rep.config["scale"] = prm.scale;
  rep.config["batch_size"] = prm.batch_size;
  rep.config["seed"] = static_cast<double>(prm.seed);

  const bool stochastic = prm.batch_size > 0 && op.has_rows() && prm.batch_size < op.num_rows();
  const int runs = stochastic ? prm.repeats : 1;  // deterministic repeats are identical
  std::vector<ParamVector> parts(static_cast<std::size_t>(runs));
  parallel_for(jobs, runs, [&](int r) {
    parts[r] = lissa_single(op, v, prm, fnv1a64_mix(prm.seed, static_cast<std::uint64_t>(r)));
  });
  ParamVector sum = ParamVector::Zero(v.size());
  for (const auto& p : parts) sum += p;
  rep.solution = sum / static_cast<double>(runs);
  rep.iterations = prm.depth;
  rep.residual_norm = (op.apply(rep.solution) - v).norm();
  return rep;
}

std::vector<double> default_lissa_grid() { return {10, 25, 50, 100, 150, 200, 250, 300, 400, 500}; }

LissaTuning tune_lissa_scale(const CurvatureOperator& op, const ParamVector& probe, const LissaParams& params,
                             std::vector<double> grid, double tolerance, int jobs) {
  if (grid.empty()) throw Error(ErrorKind::configuration, "LiSSA scale grid is empty");
  if (!(tolerance > 0.0)) throw Error(ErrorKind::configuration, "tuning tolerance must be positive");
  for (double s : grid)
    if (!(s > 0.0)) throw Error(ErrorKind::configuration, "LiSSA scales must be positive");
  std::sort(grid.begin(), grid.end());
  const ParamVector reference = solve_cg(op, probe, 0, 1e-12).solution;
  const double ref_norm = std::max(reference.norm(), std::numeric_limits<double>::min());

  LissaTuning out;
  out.trials.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    LissaScaleTrial& t = out.trials[i];
    t.scale = grid[i];
    LissaParams p = params;
    p.scale = grid[i];
    try {
      const SolverReport rep = solve_lissa(op, probe, p, jobs);
      t.rel_error = (rep.solution - reference).norm() / ref_norm;
      t.residual_norm = rep.residual_norm;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::scale_too_small) throw;
      t.diverged = true;
      t.rel_error = std::numeric_limits<double>::infinity();
      t.residual_norm = std::numeric_limits<double>::infinity();
    }
  }
  for (const auto& t : out.trials) {
    if (!t.diverged && t.rel_error <= tolerance) {
      out.scale = t.scale;
      return out;
    }
  }
  std::string msg = "no LiSSA scale met tolerance " + format_double(tolerance) + ":";
  for (const auto& t : out.trials)
    msg += " [scale " + format_double(t.scale) +
           (t.diverged ? " diverged]" : " rel_error " + format_double(t.rel_error) + "]");
  throw Error(ErrorKind::tuning, msg);
}

}  // namespace pbrf
