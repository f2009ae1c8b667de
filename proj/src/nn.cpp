#include "pbrf/nn.hpp"

#include <cmath>
#include <random>

#include "pbrf/data.hpp"
#include "pbrf/error.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const char* to_string(Activation act) {
  switch (act) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw Error(ErrorKind::configuration, "unknown activation '" + name + "'");
}

Eigen::Index NetworkSpec::param_count() const {
  Eigen::Index d = 0;
  for (std::size_t l = 1; l < layer_widths.size(); ++l)
    d += static_cast<Eigen::Index>(layer_widths[l]) * (layer_widths[l - 1] + 1);
  return d;
}

void NetworkSpec::validate() const {
  if (layer_widths.size() < 2)
    throw Error(ErrorKind::configuration, "layer_widths needs at least input and output widths");
  for (int w : layer_widths)
    if (w < 1) throw Error(ErrorKind::configuration, "layer widths must be >= 1");
  if (activations.size() != layer_widths.size() - 2)
    throw Error(ErrorKind::configuration,
                "expected " + std::to_string(layer_widths.size() - 2) +
                    " hidden activations, got " + std::to_string(activations.size()));
  if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength))
    throw Error(ErrorKind::configuration, "l2_strength must be a finite nonnegative number");
  if (loss == LossKind::softmax_cross_entropy && output_dim() < 2)
    throw Error(ErrorKind::configuration, "softmax cross-entropy needs at least 2 outputs");
}

std::string NetworkSpec::hash() const {
  std::string canon = "widths:";
  for (int w : layer_widths) canon += std::to_string(w) + ",";
  canon += ";act:";
  for (Activation a : activations) canon += std::string(to_string(a)) + ",";
  canon += ";loss:";
  canon += to_string(loss);
  canon += ";l2:" + format_double(l2_strength);
  return hex64(fnv1a64(canon));
}

ParamVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector theta(spec.param_count());
  std::mt19937_64 rng(seed);
  Eigen::Index k = 0;
  for (int l = 1; l <= spec.num_layers(); ++l) {
    const int fan_in = spec.layer_widths[l - 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const Eigen::Index count = static_cast<Eigen::Index>(spec.layer_widths[l]) * (fan_in + 1);
    for (Eigen::Index i = 0; i < count; ++i) theta(k++) = dist(rng);
  }
  return theta;
}

namespace {

struct Layer {
  Eigen::Map<const RowMatrix> W;
  Eigen::Map<const Vector> b;
};

struct MutableLayer {
  Eigen::Map<RowMatrix> W;
  Eigen::Map<Vector> b;
};

std::vector<Layer> layers_of(const NetworkSpec& spec, const ParamVector& params) {
  std::vector<Layer> out;
  out.reserve(spec.num_layers());
  const double* p = params.data();
  for (int l = 1; l <= spec.num_layers(); ++l) {
    const int rows = spec.layer_widths[l], cols = spec.layer_widths[l - 1];
    out.push_back({Eigen::Map<const RowMatrix>(p, rows, cols), Eigen::Map<const Vector>(p + rows * cols, rows)});
    p += static_cast<std::ptrdiff_t>(rows) * (cols + 1);
  }
  return out;
}

std::vector<MutableLayer> layers_of(const NetworkSpec& spec, ParamVector& params) {
  std::vector<MutableLayer> out;
  out.reserve(spec.num_layers());
  double* p = params.data();
  for (int l = 1; l <= spec.num_layers(); ++l) {
    const int rows = spec.layer_widths[l], cols = spec.layer_widths[l - 1];
    out.push_back({Eigen::Map<RowMatrix>(p, rows, cols), Eigen::Map<Vector>(p + rows * cols, rows)});
    p += static_cast<std::ptrdiff_t>(rows) * (cols + 1);
  }
  return out;
}

Matrix activate(Activation act, const Matrix& Z) {
  switch (act) {
    case Activation::relu: return Z.cwiseMax(0.0);
    case Activation::sigmoid: return Z.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    case Activation::tanh: return Z.array().tanh().matrix();
    case Activation::identity: return Z;
  }
  return Z;
}

// First derivative. ReLU'(0) = 0.
Matrix activate_d1(Activation act, const Matrix& Z) {
  switch (act) {
    case Activation::relu: return Z.unaryExpr([](double z) { return z > 0.0 ? 1.0 : 0.0; });
    case Activation::sigmoid:
      return Z.unaryExpr([](double z) {
        const double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 - s);
      });
    case Activation::tanh:
      return Z.unaryExpr([](double z) {
        const double t = std::tanh(z);
        return 1.0 - t * t;
      });
    case Activation::identity: return Matrix::Ones(Z.rows(), Z.cols());
  }
  return Z;
}

Matrix activate_d2(Activation act, const Matrix& Z) {
  switch (act) {
    case Activation::relu:
    case Activation::identity: return Matrix::Zero(Z.rows(), Z.cols());
    case Activation::sigmoid:
      return Z.unaryExpr([](double z) {
        const double s = 1.0 / (1.0 + std::exp(-z));
        return s * (1.0 - s) * (1.0 - 2.0 * s);
      });
    case Activation::tanh:
      return Z.unaryExpr([](double z) {
        const double t = std::tanh(z);
        return -2.0 * t * (1.0 - t * t);
      });
  }
  return Z;
}

void check_params(const NetworkSpec& spec, const ParamVector& params, const char* what) {
  if (params.size() != spec.param_count())
    throw Error(ErrorKind::shape, std::string(what) + " has length " + std::to_string(params.size()) +
                                      ", network expects " + std::to_string(spec.param_count()));
}

void check_data(const NetworkSpec& spec, const Dataset& data) {
  data.require_nonempty();
  if (data.input_dim() != spec.input_dim())
    throw Error(ErrorKind::shape, "dataset has " + std::to_string(data.input_dim()) +
                                      " features, network expects " + std::to_string(spec.input_dim()));
  if (data.task() == Task::classification && spec.loss == LossKind::softmax_cross_entropy &&
      data.num_classes() > spec.output_dim())
    throw Error(ErrorKind::shape, "more classes than network outputs");
}

}  // namespace

namespace kernel {

ForwardCache forward(const NetworkSpec& spec, const ParamVector& params, const Matrix& X) {
  const auto layers = layers_of(spec, params);
  const int L = spec.num_layers();
  ForwardCache cache;
  cache.pre.reserve(L);
  cache.post.reserve(L + 1);
  cache.post.push_back(X);
  for (int l = 0; l < L; ++l) {
    Matrix Z = layers[l].W * cache.post.back();
    Z.colwise() += layers[l].b;
    if (l + 1 < L) {
      cache.post.push_back(activate(spec.activations[l], Z));
    } else {
      cache.post.push_back(Z);
    }
    cache.pre.push_back(std::move(Z));
  }
  return cache;
}

ParamVector vjp(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
                const Matrix& G) {
  const auto layers = layers_of(spec, params);
  ParamVector grad = ParamVector::Zero(params.size());
  auto glayers = layers_of(spec, grad);
  const int L = spec.num_layers();
  Matrix delta = G;
  for (int l = L - 1; l >= 0; --l) {
    glayers[l].W.noalias() = delta * cache.post[l].transpose();
    glayers[l].b = delta.rowwise().sum();
    if (l > 0) {
      Matrix dA = layers[l].W.transpose() * delta;
      delta = (dA.array() * activate_d1(spec.activations[l - 1], cache.pre[l - 1]).array()).matrix();
    }
  }
  return grad;
}

Matrix jvp(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
           const ParamVector& v) {
  const auto layers = layers_of(spec, params);
  const auto tangent = layers_of(spec, v);
  const int L = spec.num_layers();
  Matrix dA;
  Matrix dZ;
  for (int l = 0; l < L; ++l) {
    dZ = tangent[l].W * cache.post[l];
    dZ.colwise() += tangent[l].b;
    if (l > 0) dZ.noalias() += layers[l].W * dA;
    if (l + 1 < L) dA = (activate_d1(spec.activations[l], cache.pre[l]).array() * dZ.array()).matrix();
  }
  return dZ;
}

ParamVector gnh_sum(const NetworkSpec& spec, const ParamVector& params, const ForwardCache& cache,
                    const ParamVector& v) {
  const Matrix U = jvp(spec, params, cache, v);
  return vjp(spec, params, cache, apply_output_hessian(spec.loss, cache.outputs(), U));
}

ParamVector hessian_sum(const NetworkSpec& spec, const ParamVector& params,
                        const ForwardCache& cache, const TargetBatch& targets,
                        const ParamVector& v) {
  const auto layers = layers_of(spec, params);
  const auto tangent = layers_of(spec, v);
  const int L = spec.num_layers();

  // Forward tangents R(Z_l), R(A_l).
  std::vector<Matrix> RZ(L), RA(L + 1);
  RA[0] = Matrix::Zero(cache.post[0].rows(), cache.post[0].cols());
  for (int l = 0; l < L; ++l) {
    RZ[l] = tangent[l].W * cache.post[l];
    RZ[l].colwise() += tangent[l].b;
    if (l > 0) RZ[l].noalias() += layers[l].W * RA[l];
    RA[l + 1] = l + 1 < L ? Matrix((activate_d1(spec.activations[l], cache.pre[l]).array() * RZ[l].array()).matrix())
                          : RZ[l];
  }

  ParamVector out = ParamVector::Zero(params.size());
  auto olayers = layers_of(spec, out);
  Matrix delta = loss_output_grads(spec.loss, cache.outputs(), targets);
  Matrix Rdelta = apply_output_hessian(spec.loss, cache.outputs(), RZ[L - 1]);
  for (int l = L - 1; l >= 0; --l) {
    olayers[l].W.noalias() = Rdelta * cache.post[l].transpose();
    if (l > 0) olayers[l].W.noalias() += delta * RA[l].transpose();
    olayers[l].b = Rdelta.rowwise().sum();
    if (l > 0) {
      const Matrix dA = layers[l].W.transpose() * delta;
      Matrix RdA = tangent[l].W.transpose() * delta;
      RdA.noalias() += layers[l].W.transpose() * Rdelta;
      const Activation act = spec.activations[l - 1];
      const Matrix d1 = activate_d1(act, cache.pre[l - 1]);
      const Matrix d2 = activate_d2(act, cache.pre[l - 1]);
      Rdelta = (d2.array() * RZ[l - 1].array() * dA.array() + d1.array() * RdA.array()).matrix();
      delta = (d1.array() * dA.array()).matrix();
    }
  }
  return out;
}

}  // namespace kernel

Matrix forward(const ParamVector& params, const NetworkSpec& spec, const Matrix& inputs) {
  spec.validate();
  check_params(spec, params, "parameter vector");
  if (inputs.cols() != spec.input_dim())
    throw Error(ErrorKind::shape, "input-shape error: inputs have " + std::to_string(inputs.cols()) +
                                      " columns, network expects " + std::to_string(spec.input_dim()));
  const Matrix X = inputs.transpose();
  return kernel::forward(spec, params, X).outputs().transpose();
}

CostGrad cost_and_grad(const ParamVector& params, const NetworkSpec& spec, const Dataset& data) {
  spec.validate();
  check_params(spec, params, "parameter vector");
  check_data(spec, data);
  const double n = static_cast<double>(data.size());
  const auto cache = kernel::forward(spec, params, data.all_inputs_columns());
  const TargetBatch targets = data.all_targets(spec.loss);
  CostGrad out;
  out.cost = loss_values(spec.loss, cache.outputs(), targets).sum() / n +
             0.5 * spec.l2_strength * params.squaredNorm();
  out.grad = kernel::vjp(spec, params, cache, loss_output_grads(spec.loss, cache.outputs(), targets)) / n +
             spec.l2_strength * params;
  return out;
}

ParamVector hvp(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                const ParamVector& v) {
  spec.validate();
  check_params(spec, params, "parameter vector");
  check_params(spec, v, "direction vector");
  check_data(spec, data);
  const auto cache = kernel::forward(spec, params, data.all_inputs_columns());
  return kernel::hessian_sum(spec, params, cache, data.all_targets(spec.loss), v) /
             static_cast<double>(data.size()) +
         spec.l2_strength * v;
}

Vector jvp_outputs(const ParamVector& params, const NetworkSpec& spec, const Vector& x,
                   const ParamVector& v) {
  spec.validate();
  check_params(spec, params, "parameter vector");
  check_params(spec, v, "direction vector");
  if (x.size() != spec.input_dim()) throw Error(ErrorKind::shape, "input length does not match network");
  const Matrix X = x;
  const auto cache = kernel::forward(spec, params, X);
  return kernel::jvp(spec, params, cache, v).col(0);
}

ParamVector gnh_vp(const ParamVector& params, const NetworkSpec& spec, const Dataset& data,
                   const ParamVector& v, double damping) {
  if (!(damping >= 0.0)) throw Error(ErrorKind::configuration, "damping must be nonnegative");
  spec.validate();
  check_params(spec, params, "parameter vector");
  check_params(spec, v, "direction vector");
  check_data(spec, data);
  const auto cache = kernel::forward(spec, params, data.all_inputs_columns());
  return kernel::gnh_sum(spec, params, cache, v) / static_cast<double>(data.size()) +
         (damping + spec.l2_strength) * v;
}

}  // namespace pbrf
