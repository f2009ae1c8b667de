#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pbrf/data.hpp"
#include "pbrf/nn.hpp"

namespace pbrf {

enum class CurvatureKind { hessian, gnh };

const char* to_string(CurvatureKind kind);
CurvatureKind curvature_from_string(const std::string& name);

/// Matrix-free (C + damping I) where C is the cost Hessian or GNH at a fixed
/// point. `apply_rows` evaluates C on a subset of examples (for stochastic
/// LiSSA); `apply` is the full-dataset operator and is defined as
/// apply_rows(all rows) when rows are available.
class CurvatureOperator {
 public:
  using FullApply = std::function<ParamVector(const ParamVector&)>;
  using RowApply = std::function<ParamVector(const ParamVector&, std::span<const int>)>;

  CurvatureOperator(FullApply curvature, Eigen::Index dim, CurvatureKind kind, double damping);
  CurvatureOperator(RowApply curvature_rows, int num_rows, Eigen::Index dim, CurvatureKind kind,
                    double damping);

  /// Dense symmetric C (tests and small problems).
  static CurvatureOperator from_matrix(const Matrix& C, double damping,
                                       CurvatureKind kind = CurvatureKind::gnh);

  /// Hessian or GNH of the cost of (spec, data) at `params`, including the
  /// L2 term. The forward pass at `params` is computed once and reused.
  static CurvatureOperator for_model(const ParamVector& params, const NetworkSpec& spec,
                                     const Dataset& data, CurvatureKind kind, double damping);

  ParamVector apply(const ParamVector& v) const;
  ParamVector apply_rows(const ParamVector& v, std::span<const int> rows) const;

  bool has_rows() const { return static_cast<bool>(rows_); }
  int num_rows() const { return num_rows_; }
  Eigen::Index dim() const { return dim_; }
  CurvatureKind kind() const { return kind_; }
  double damping() const { return damping_; }
  std::uint64_t applications() const { return count_->load(); }

 private:
  FullApply full_;
  RowApply rows_;
  int num_rows_ = 0;
  Eigen::Index dim_ = 0;
  CurvatureKind kind_ = CurvatureKind::gnh;
  double damping_ = 0.0;
  std::shared_ptr<std::atomic<std::uint64_t>> count_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

struct SolverReport {
  ParamVector solution;
  int iterations = 0;
  double residual_norm = 0.0;  // ||(C + damping I) x - v||, recomputed at exit
  std::string solver;
  std::map<std::string, double> config;
};

/// Dense factorization of (C + damping I), reusable across right-hand sides.
class ExactSolver {
 public:
  explicit ExactSolver(const CurvatureOperator& op, Eigen::Index cap = 2000);
  SolverReport solve(const ParamVector& v) const;
  double min_eigenvalue() const { return min_eig_; }

 private:
  CurvatureOperator op_;
  Matrix eigvecs_;
  Vector eigvals_;
  Eigen::LLT<Matrix> llt_;
  bool use_llt_ = false;
  double min_eig_ = 0.0;
};

SolverReport solve_exact(const CurvatureOperator& op, const ParamVector& v, Eigen::Index cap = 2000);

/// Conjugate gradients from x0 = 0; stops at ||r|| <= tol * ||v|| or max_iter
/// (0 = dim). Throws an indefiniteness error if p^T A p <= 0.
SolverReport solve_cg(const CurvatureOperator& op, const ParamVector& v, int max_iter = 0,
                      double tol = 1e-10);

struct LissaParams {
  int depth = 5000;
  int repeats = 1;
  double scale = 10.0;
  std::uint64_t seed = 0;
  int batch_size = 0;  // 0 = full dataset each step (deterministic mode)
};

/// Truncated Neumann recursion r_0 = v, r_t = v + (I - A/scale) r_{t-1},
/// returning r_T / scale averaged over repeats.
SolverReport solve_lissa(const CurvatureOperator& op, const ParamVector& v, const LissaParams& params,
                         int jobs = 1);

struct LissaScaleTrial {
  double scale = 0.0;
  bool diverged = false;
  double rel_error = 0.0;  // against the CG reference; infinite when diverged
  double residual_norm = 0.0;
};

struct LissaTuning {
  double scale = 0.0;
  std::vector<LissaScaleTrial> trials;  // grid order, ascending scale
};

std::vector<double> default_lissa_grid();

/// Runs LiSSA at every grid scale on `probe` and picks the smallest scale that
/// does not diverge and matches a tight CG solve to `tolerance` (relative).
/// Throws a tuning error listing every trial when no scale qualifies.
LissaTuning tune_lissa_scale(const CurvatureOperator& op, const ParamVector& probe, const LissaParams& params,
                             std::vector<double> grid, double tolerance, int jobs = 1);

}  // namespace pbrf
