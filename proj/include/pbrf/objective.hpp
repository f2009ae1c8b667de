#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pbrf/data.hpp"
#include "pbrf/nn.hpp"

namespace pbrf {

/// The retraining objectives, ordered from LOO retraining towards the
/// linearized problem that influence functions solve exactly.
enum class ObjectiveTag {
  cold_downweighted,            // J(theta) - eps * sum_z L_z(theta), started from theta^0
  warm_downweighted,            // same objective, started from theta^s
  proximal,                     // + damping/2 ||theta - theta^s||^2
  proximal_bregman,             // training loss replaced by a Bregman divergence to f(theta^s, x)
  linearized_proximal_bregman,  // quadratic model of the above around theta^s
};

const char* to_string(ObjectiveTag tag);
ObjectiveTag objective_tag_from_string(const std::string& name);

/// Anchor-dependent quantities shared by every objective built around the
/// same theta^s. Built once per base run.
struct AnchorState {
  ParamVector params;
  kernel::ForwardCache cache;  // full-dataset forward pass at the anchor, column batch
};

struct Objective {
  ObjectiveTag tag = ObjectiveTag::cold_downweighted;
  double epsilon = 0.0;  // downweighting applied to each removed example
  std::vector<std::int64_t> removed;
  double damping = 0.0;
  std::shared_ptr<const AnchorState> anchor;  // required except for cold/warm
  std::optional<ParamVector> anchor_removed_grad;  // sum_z grad_theta L_z(theta^s); linearized only

  /// Throws a configuration error when the tag's requirements are missing.
  void validate(const NetworkSpec& spec, const Dataset& data) const;
};

std::shared_ptr<const AnchorState> make_anchor(const ParamVector& params, const NetworkSpec& spec,
                                               const Dataset& data);

/// Builds an objective with everything it needs cached. `epsilon` defaults to
/// 1/N per removed example. `anchor` may be null for cold/warm tags.
Objective make_objective(ObjectiveTag tag, const NetworkSpec& spec, const Dataset& data,
                         std::vector<std::int64_t> removed, std::optional<double> epsilon,
                         double damping, std::shared_ptr<const AnchorState> anchor);

struct ObjectiveValue {
  double value = 0.0;
  ParamVector grad;  // empty when not requested
};

/// Minibatch estimate: per-example data terms are averaged over `rows`, while
/// the removed-example, regulariser and proximity terms enter in full. With
/// all rows this is the exact objective.
ObjectiveValue evaluate_on_rows(const Objective& objective, const ParamVector& params,
                                const NetworkSpec& spec, const Dataset& data,
                                std::span<const int> rows, bool with_grad);

double evaluate_objective(const Objective& objective, const ParamVector& params,
                          const NetworkSpec& spec, const Dataset& data);

ParamVector gradient_of_objective(const Objective& objective, const ParamVector& params,
                                  const NetworkSpec& spec, const Dataset& data);

/// (1/N) sum_i D_L(f(theta, x_i), f(theta^s, x_i)); nonnegative for losses
/// that are convex in the outputs.
double bregman_term(const ParamVector& params, const ParamVector& anchor, const NetworkSpec& spec,
                    const Dataset& data);

namespace kernel {
/// Selects columns `rows` from every cached layer.
ForwardCache slice(const ForwardCache& cache, std::span<const int> rows);
}  // namespace kernel

}  // namespace pbrf
