#include "pbrf/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pbrf/error.hpp"
#include "pbrf/util.hpp"

namespace pbrf {

const char* to_string(Optimizer opt) {
  switch (opt) {
    case Optimizer::gd: return "gd";
    case Optimizer::sgd: return "sgd";
    case Optimizer::sgd_momentum: return "sgd_momentum";
  }
  return "unknown";
}

Optimizer optimizer_from_string(const std::string& name) {
  if (name == "gd") return Optimizer::gd;
  if (name == "sgd") return Optimizer::sgd;
  if (name == "sgd_momentum") return Optimizer::sgd_momentum;
  throw Error(ErrorKind::configuration, "unknown optimizer '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::configuration, "epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error(ErrorKind::configuration, "learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorKind::configuration, "momentum must lie in [0, 1)");
  if (batch_size < 0) throw Error(ErrorKind::configuration, "batch_size must be positive or 0 (full)");
  if (optimizer == Optimizer::gd && batch_size != 0)
    throw Error(ErrorKind::configuration, "gd is full-batch; set batch_size to 0 (\"full\")");
  if (grad_tol < 0.0) throw Error(ErrorKind::configuration, "grad_tol must be nonnegative");
  for (const auto& m : lr_decay)
    if (m.epoch < 0 || !(m.factor > 0.0)) throw Error(ErrorKind::configuration, "invalid lr_decay milestone");
}

double TrainConfig::lr_at(int epoch) const {
  double lr = learning_rate;
  for (const auto& m : lr_decay)
    if (m.epoch <= epoch) lr *= m.factor;
  return lr;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::vector<int> epoch_order(std::uint64_t seed, int epoch, int n) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

TrainResult train(const Objective& objective, const ParamVector& init, const TrainConfig& config,
                  const NetworkSpec& spec, const Dataset& data) {
  spec.validate();
  config.validate();
  data.require_nonempty();
  objective.validate(spec, data);
  if (init.size() != spec.param_count()) throw Error(ErrorKind::shape, "initial parameters do not match network");

  const int n = static_cast<int>(data.size());
  const bool full_batch = config.batch_size == 0 || config.batch_size >= n;
  const bool use_momentum = config.optimizer == Optimizer::sgd_momentum && config.momentum > 0.0;
  const std::vector<int> all_rows = data.all_rows();

  TrainResult result;
  result.params = init;
  ParamVector velocity;
  if (use_momentum) velocity = ParamVector::Zero(init.size());
  std::uint64_t digest = 0xcbf29ce484222325ULL;

  auto step = [&](const ParamVector& grad, double lr) {
    if (use_momentum) {
      velocity = config.momentum * velocity + grad;
      result.params -= lr * velocity;
    } else {
      result.params -= lr * grad;
    }
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.lr_at(epoch);
    double epoch_cost = 0.0;
    if (full_batch) {
      const auto ev = evaluate_on_rows(objective, result.params, spec, data, all_rows, true);
      epoch_cost = ev.value;
      result.final_grad_norm = ev.grad.norm();
      if (!std::isfinite(epoch_cost) || !std::isfinite(result.final_grad_norm))
        throw Error(ErrorKind::divergence, "cost became non-finite at epoch " + std::to_string(epoch));
      if (config.grad_tol > 0.0 && result.final_grad_norm <= config.grad_tol) {
        result.epoch_costs.push_back(epoch_cost);
        break;
      }
      step(ev.grad, lr);
      digest = fnv1a64_mix(digest, static_cast<std::uint64_t>(epoch));
    } else {
      const auto order = epoch_order(config.seed, epoch, n);
      for (int v : order) digest = fnv1a64_mix(digest, static_cast<std::uint64_t>(v));
      int batches = 0;
      for (int start = 0; start < n; start += config.batch_size) {
        const int stop = std::min(n, start + config.batch_size);
        const std::span<const int> rows(order.data() + start, static_cast<std::size_t>(stop - start));
        const auto ev = evaluate_on_rows(objective, result.params, spec, data, rows, true);
        if (!std::isfinite(ev.value))
          throw Error(ErrorKind::divergence, "cost became non-finite at epoch " + std::to_string(epoch));
        epoch_cost += ev.value;
        ++batches;
        step(ev.grad, lr);
      }
      epoch_cost /= batches;
    }
    if (!result.params.allFinite())
      throw Error(ErrorKind::divergence, "parameters became non-finite at epoch " + std::to_string(epoch));
    result.epoch_costs.push_back(epoch_cost);
    result.epochs_run = epoch + 1;
  }
  result.batch_order_digest = digest;
  return result;
}

BaseRun train_base(const NetworkSpec& spec, const Dataset& data, const TrainConfig& config,
                   std::uint64_t init_seed) {
  BaseRun base;
  base.init = init_params(spec, init_seed);
  base.init_seed = init_seed;
  base.config = config;
  const Objective obj = make_objective(ObjectiveTag::cold_downweighted, spec, data, {}, 0.0, 0.0, nullptr);
  base.result = train(obj, base.init, config, spec, data);
  base.params = base.result.params;
  return base;
}

int retrain_epochs(const BaseRun& base, const ProtocolConfig& protocol) {
  return std::max(1, static_cast<int>(std::lround(base.config.epochs * protocol.retrain_fraction)));
}

TrainConfig retrain_config(const BaseRun& base, const ProtocolConfig& protocol, bool bregman) {
  TrainConfig cfg = base.config;
  cfg.learning_rate = base.config.lr_at(base.config.epochs - 1) * (bregman ? protocol.bregman_lr_factor : 1.0);
  cfg.lr_decay.clear();
  cfg.epochs = retrain_epochs(base, protocol);
  cfg.seed = protocol.retrain_seed;
  return cfg;
}

const ParamVector& ResponseSet::at(ObjectiveTag tag) const {
  switch (tag) {
    case ObjectiveTag::cold_downweighted: return cold;
    case ObjectiveTag::warm_downweighted: return warm;
    case ObjectiveTag::proximal: return proximal;
    case ObjectiveTag::proximal_bregman: return pbrf;
    case ObjectiveTag::linearized_proximal_bregman: return linearized_pbrf;
  }
  throw Error(ErrorKind::configuration, "unknown objective tag");
}

ParamVector protocol_run(ObjectiveTag tag, const BaseRun& base, const ProtocolConfig& protocol,
                         const NetworkSpec& spec, const Dataset& data, const std::vector<std::int64_t>& removed,
                         std::shared_ptr<const AnchorState> anchor) {
  try {
    const bool warm = tag != ObjectiveTag::cold_downweighted;
    if (!anchor && tag != ObjectiveTag::cold_downweighted && tag != ObjectiveTag::warm_downweighted)
      anchor = make_anchor(base.params, spec, data);
    TrainConfig cfg;
    if (warm) {
      const bool bregman =
          tag == ObjectiveTag::proximal_bregman || tag == ObjectiveTag::linearized_proximal_bregman;
      cfg = retrain_config(base, protocol, bregman);
    } else {
      cfg = base.config;
      cfg.epochs = base.config.epochs + retrain_epochs(base, protocol);
    }
    const Objective obj = make_objective(tag, spec, data, removed, protocol.epsilon, protocol.damping, anchor);
    return train(obj, warm ? base.params : base.init, cfg, spec, data).params;
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(to_string(tag)) + ": " + e.what());
  }
}

ResponseSet six_way_protocol(const BaseRun& base, const ProtocolConfig& protocol, const NetworkSpec& spec,
                             const Dataset& data, const std::vector<std::int64_t>& removed,
                             std::shared_ptr<const AnchorState> anchor) {
  if (!anchor) anchor = make_anchor(base.params, spec, data);
  ResponseSet out;
  out.cold = protocol_run(ObjectiveTag::cold_downweighted, base, protocol, spec, data, removed, anchor);
  out.warm = protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, data, removed, anchor);
  out.proximal = protocol_run(ObjectiveTag::proximal, base, protocol, spec, data, removed, anchor);
  out.pbrf = protocol_run(ObjectiveTag::proximal_bregman, base, protocol, spec, data, removed, anchor);
  out.linearized_pbrf =
      protocol_run(ObjectiveTag::linearized_proximal_bregman, base, protocol, spec, data, removed, anchor);
  return out;
}

}  // namespace pbrf
