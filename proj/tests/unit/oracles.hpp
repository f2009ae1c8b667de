#pragma once

// Independent reference computations used as test oracles. Nothing here calls
// the derivative code under test.

#include <cmath>
#include <functional>
#include <random>

#include "pbrf/data.hpp"
#include "pbrf/nn.hpp"

namespace oracle {

using pbrf::Matrix;
using pbrf::ParamVector;
using pbrf::Vector;

inline Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  const Vector v = random_vector(r * c, seed, scale);
  return Eigen::Map<const Matrix>(v.data(), r, c);
}

inline Matrix random_spd(Eigen::Index n, std::uint64_t seed, double shift = 0.1) {
  const Matrix A = random_matrix(n, n, seed) / std::sqrt(static_cast<double>(n));
  return A * A.transpose() + shift * Matrix::Identity(n, n);
}

inline pbrf::Dataset regression_data(int n, int p, int m, std::uint64_t seed) {
  return pbrf::Dataset::regression(random_matrix(n, p, seed), random_matrix(n, m, seed + 1));
}

inline pbrf::Dataset classification_data(int n, int p, int classes, std::uint64_t seed) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  return pbrf::Dataset::classification(random_matrix(n, p, seed), labels, classes);
}

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x, b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2 * h);
  }
  return g;
}

/// m x d Jacobian of the network output at x, by central differences of the
/// forward pass.
inline Matrix fd_jacobian(const ParamVector& params, const pbrf::NetworkSpec& spec, const Vector& x,
                          double h = 1e-6) {
  const Matrix X = x.transpose();
  Matrix J(spec.output_dim(), params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    ParamVector a = params, b = params;
    a(i) += h;
    b(i) -= h;
    J.col(i) = (pbrf::forward(a, spec, X) - pbrf::forward(b, spec, X)).transpose().col(0) / (2 * h);
  }
  return J;
}

/// Output Hessian written out from the loss formulas.
inline Matrix loss_hessian(pbrf::LossKind kind, const Vector& y) {
  const auto m = y.size();
  switch (kind) {
    case pbrf::LossKind::squared_error: return Matrix::Identity(m, m);
    case pbrf::LossKind::binary_cross_entropy: {
      Matrix H = Matrix::Zero(m, m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-y(i)));
        H(i, i) = s * (1 - s);
      }
      return H;
    }
    case pbrf::LossKind::softmax_cross_entropy: {
      Vector p = (y.array() - y.maxCoeff()).exp();
      p /= p.sum();
      Matrix H = -p * p.transpose();
      H.diagonal() += p;
      return H;
    }
  }
  return {};
}

/// (1/N) sum_i J_i^T H_i J_i assembled densely.
inline Matrix dense_gnh(const ParamVector& params, const pbrf::NetworkSpec& spec, const pbrf::Dataset& data) {
  Matrix G = Matrix::Zero(params.size(), params.size());
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const Vector x = data.inputs().row(i).transpose();
    const Matrix J = fd_jacobian(params, spec, x);
    const Vector y = pbrf::forward(params, spec, x.transpose()).row(0).transpose();
    G += J.transpose() * loss_hessian(spec.loss, y) * J;
  }
  return G / static_cast<double>(data.size());
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(1e-300, b.norm());
}

}  // namespace oracle
