#include "pbrf/loss.hpp"

#include <cmath>

#include "pbrf/error.hpp"

namespace pbrf {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::squared_error: return "squared_error";
    case LossKind::binary_cross_entropy: return "binary_cross_entropy";
    case LossKind::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  if (name == "squared_error") return LossKind::squared_error;
  if (name == "binary_cross_entropy") return LossKind::binary_cross_entropy;
  if (name == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
  throw Error(ErrorKind::configuration, "unknown loss_kind '" + name + "'");
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix softmax_columns(const Matrix& Y) {
  Matrix P(Y.rows(), Y.cols());
  for (Eigen::Index j = 0; j < Y.cols(); ++j) {
    const double mx = Y.col(j).maxCoeff();
    P.col(j) = (Y.col(j).array() - mx).exp().matrix();
    P.col(j) /= P.col(j).sum();
  }
  return P;
}

void check_batch(const Matrix& outputs, const TargetBatch& targets, LossKind kind) {
  if (kind == LossKind::softmax_cross_entropy) {
    if (static_cast<Eigen::Index>(targets.labels.size()) != outputs.cols())
      throw Error(ErrorKind::shape, "label count does not match batch size");
    for (int label : targets.labels)
      if (label < 0 || label >= outputs.rows())
        throw Error(ErrorKind::shape, "label " + std::to_string(label) + " outside output range");
  } else if (targets.values.rows() != outputs.rows() || targets.values.cols() != outputs.cols()) {
    throw Error(ErrorKind::shape, "target block shape does not match outputs");
  }
}

}  // namespace

Vector loss_values(LossKind kind, const Matrix& outputs, const TargetBatch& targets) {
  check_batch(outputs, targets, kind);
  Vector out(outputs.cols());
  switch (kind) {
    case LossKind::squared_error:
      out = 0.5 * (outputs - targets.values).colwise().squaredNorm().transpose();
      break;
    case LossKind::binary_cross_entropy:
      for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < outputs.rows(); ++k) {
          const double y = outputs(k, j);
          s += softplus(y) - targets.values(k, j) * y;
        }
        out(j) = s;
      }
      break;
    case LossKind::softmax_cross_entropy:
      for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
        const double mx = outputs.col(j).maxCoeff();
        const double lse = mx + std::log((outputs.col(j).array() - mx).exp().sum());
        out(j) = lse - outputs(targets.labels[j], j);
      }
      break;
  }
  return out;
}

Matrix loss_output_grads(LossKind kind, const Matrix& outputs, const TargetBatch& targets) {
  check_batch(outputs, targets, kind);
  switch (kind) {
    case LossKind::squared_error:
      return outputs - targets.values;
    case LossKind::binary_cross_entropy:
      return outputs.unaryExpr([](double y) { return sigmoid(y); }) - targets.values;
    case LossKind::softmax_cross_entropy: {
      Matrix P = softmax_columns(outputs);
      for (Eigen::Index j = 0; j < P.cols(); ++j) P(targets.labels[j], j) -= 1.0;
      return P;
    }
  }
  return {};
}

Matrix apply_output_hessian(LossKind kind, const Matrix& outputs, const Matrix& directions) {
  if (outputs.rows() != directions.rows() || outputs.cols() != directions.cols())
    throw Error(ErrorKind::shape, "output Hessian direction shape mismatch");
  switch (kind) {
    case LossKind::squared_error:
      return directions;
    case LossKind::binary_cross_entropy: {
      const Matrix s = outputs.unaryExpr([](double y) { return sigmoid(y); });
      return (s.array() * (1.0 - s.array()) * directions.array()).matrix();
    }
    case LossKind::softmax_cross_entropy: {
      const Matrix P = softmax_columns(outputs);
      Matrix out = (P.array() * directions.array()).matrix();
      const Eigen::RowVectorXd pu = out.colwise().sum();
      out -= (P.array().rowwise() * pu.array()).matrix();
      return out;
    }
  }
  return {};
}

OutputHessian output_hessian(const Vector& output, LossKind kind) {
  const Eigen::Index m = output.size();
  switch (kind) {
    case LossKind::squared_error:
      return {Matrix::Identity(m, m)};
    case LossKind::binary_cross_entropy: {
      Vector d(m);
      for (Eigen::Index k = 0; k < m; ++k) {
        const double s = sigmoid(output(k));
        d(k) = s * (1.0 - s);
      }
      return {d.asDiagonal().toDenseMatrix()};
    }
    case LossKind::softmax_cross_entropy: {
      const Vector p = softmax_columns(output);
      Matrix H = -p * p.transpose();
      H.diagonal() += p;
      return {H};
    }
  }
  throw Error(ErrorKind::configuration, "unsupported loss_kind");
}

}  // namespace pbrf
