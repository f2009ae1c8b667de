#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "pbrf/data.hpp"
#include "pbrf/nn.hpp"
#include "pbrf/solvers.hpp"

namespace pbrf {

enum class SolverKind { exact, cg, lissa };

const char* to_string(SolverKind kind);
SolverKind solver_from_string(const std::string& name);

struct InfluenceConfig {
  std::optional<double> epsilon;  // per removed example; default 1/N
  double damping = 1e-3;
  CurvatureKind curvature = CurvatureKind::gnh;
  SolverKind solver = SolverKind::exact;
  int cg_max_iter = 0;  // 0 = d
  double cg_tol = 1e-10;
  LissaParams lissa;
  Eigen::Index exact_cap = 2000;
  int jobs = 1;

  void validate() const;
};

struct InfluenceEstimate {
  ParamVector delta_params;  // predicted theta change from removing `removed`
  std::vector<std::int64_t> removed;
  SolverReport report;
};

/// Per-test-point precomputed solves (C + damping I)^{-1} grad L_test.
struct StestBatch {
  std::map<std::int64_t, ParamVector> vectors;
  int solves = 0;
};

/// Influence estimators around fixed parameters theta^s. The curvature
/// operator (and, for the exact solver, its factorization) is built once and
/// shared across queries; all queries are const and thread-safe.
class InfluenceEngine {
 public:
  InfluenceEngine(ParamVector params, NetworkSpec spec, Dataset data, InfluenceConfig cfg);

  double epsilon() const;
  const CurvatureOperator& op() const { return op_; }
  const Dataset& data() const { return data_; }

  /// sum over ids of grad_theta L(f(theta^s, x_z), t_z) for training ids.
  ParamVector removed_gradient(const std::vector<std::int64_t>& ids) const;
  /// grad_theta L at a row of another dataset (test points).
  ParamVector point_gradient(const Dataset& points, std::int64_t id) const;

  SolverReport solve(const ParamVector& v) const;

  InfluenceEstimate param_influence(const std::vector<std::int64_t>& removed) const;

  /// eps * grad L_test^T (C + damping I)^{-1} sum_z grad L_z. Positive means
  /// removing the examples increases the test loss. The unperturbed test loss
  /// is not included.
  double test_loss_influence(const std::vector<std::int64_t>& removed, const Dataset& test,
                             std::int64_t test_id) const;

  double self_influence(std::int64_t id) const;

  StestBatch stest_batch(const Dataset& test, const std::vector<std::int64_t>& test_ids) const;
  double score(const ParamVector& s_test, const std::vector<std::int64_t>& removed) const;

 private:
  ParamVector params_;
  NetworkSpec spec_;
  Dataset data_;
  InfluenceConfig cfg_;
  CurvatureOperator op_;
  std::shared_ptr<ExactSolver> exact_;
};

InfluenceEstimate param_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                                  const std::vector<std::int64_t>& removed, const InfluenceConfig& cfg);

double test_loss_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                           const std::vector<std::int64_t>& removed, const Dataset& test,
                           std::int64_t test_id, const InfluenceConfig& cfg);

double self_influence(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                      std::int64_t id, const InfluenceConfig& cfg);

}  // namespace pbrf
