#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pbrf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Squared error is 0.5 * ||y - t||^2 so its output Hessian is exactly I.
// Binary cross-entropy and softmax cross-entropy both take raw logits.
enum class LossKind { squared_error, binary_cross_entropy, softmax_cross_entropy };

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

// Targets for a column batch of B examples. Squared error and binary
// cross-entropy read `values` (m x B); softmax cross-entropy reads `labels`
// and expands them to one-hot inside the loss.
struct TargetBatch {
  Matrix values;
  std::vector<int> labels;

  Eigen::Index size() const {
    return labels.empty() ? values.cols() : static_cast<Eigen::Index>(labels.size());
  }
};

/// Per-example losses for the column batch `outputs` (m x B).
Vector loss_values(LossKind kind, const Matrix& outputs, const TargetBatch& targets);

/// dL/dy per example, m x B.
Matrix loss_output_grads(LossKind kind, const Matrix& outputs, const TargetBatch& targets);

/// Applies H_y (evaluated at each column of `outputs`) to each column of
/// `directions`. None of the supported losses have target-dependent
/// output Hessians, so targets are not needed.
Matrix apply_output_hessian(LossKind kind, const Matrix& outputs, const Matrix& directions);

/// Output-space Hessian of the loss at a single prediction. Symmetric PSD.
struct OutputHessian {
  Matrix matrix;
};

OutputHessian output_hessian(const Vector& output, LossKind kind);

}  // namespace pbrf
