#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbrf/loss.hpp"

namespace pbrf {

/// Flat parameter vector. Layout is layer-major; within a layer the weight
/// matrix comes first (row-major, out x in) followed by the bias.
using ParamVector = Eigen::VectorXd;

enum class Activation { relu, sigmoid, tanh, identity };

const char* to_string(Activation act);
Activation activation_from_string(const std::string& name);

struct NetworkSpec {
  std::vector<int> layer_widths;         // input dim first, output dim last
  std::vector<Activation> activations;   // one per hidden layer
  LossKind loss = LossKind::squared_error;
  double l2_strength = 0.0;

  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  Eigen::Index param_count() const;

  /// Throws configuration errors for malformed widths or activations.
  void validate() const;

  /// Stable FNV-1a digest of the architecture, used to tag saved parameters.
  std::string hash() const;

  bool operator==(const NetworkSpec&) const = default;
};

class Dataset;

/// Seeded init, each weight and bias uniform in +-1/sqrt(fan_in).
ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed);

// All public entry points take row-major batches (one example per row) and
// validate shapes. The column-batch kernels below are used by the training
// and curvature code to avoid repeated transposes.

/// inputs: B x p  ->  B x m.
Matrix forward(const ParamVector& params, const NetworkSpec& spec, const Matrix& inputs);

struct CostGrad {
  double cost = 0.0;
  ParamVector grad;
};

/// Mean loss over the dataset plus 0.5 * l2 * ||theta||^2, with its gradient.
CostGrad cost_and_grad(const ParamVector& params, const NetworkSpec& spec, const Dataset& data);

/// Hessian-vector product of the cost, via forward-over-reverse propagation.
ParamVector hvp(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                const ParamVector& v);

/// J(x) v for a single input x (length p). Returns an m-vector.
Vector jvp_outputs(const ParamVector& params, const NetworkSpec& spec, const Vector& x,
                   const ParamVector& v);

/// (1/N) sum_i J_i^T H_i J_i v + (damping + l2) v without forming G.
ParamVector gnh_vp(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                   const ParamVector& v, double damping);

namespace kernel {

// Column-batch kernels. X is p x B.

struct ForwardCache {
  std::vector<Matrix> pre;   // pre-activations Z_l, l = 1..L
  std::vector<Matrix> post;  // post[0] = X, post[l] = act(Z_l), post[L] = Z_L
  const Matrix& outputs() const { return post.back(); }
};

ForwardCache forward(const NetworkSpec& spec, const ParamVector& params, const Matrix& X);

/// sum_i J_i^T g_i for output cotangents G (m x B).
ParamVector vjp(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
                const Matrix& G);

/// Column-wise J_i v, m x B.
Matrix jvp(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
           const ParamVector& v);

/// sum_i J_i^T H_i J_i v, with H_i evaluated at the cached outputs.
ParamVector gnh_sum(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
                    const ParamVector& v);

/// sum_i d^2 L_i / d theta^2 v (data term only, no regulariser).
ParamVector hessian_sum(const NetworkSpec& spec, const ParamVector& params,
                        const ForwardCache& cache, const TargetBatch& targets,
                        const ParamVector& v);

}  // namespace kernel

}  // namespace pbrf
