#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pbrf/objective.hpp"

namespace pbrf {

enum class Optimizer { gd, sgd, sgd_momentum };

const char* to_string(Optimizer opt);
Optimizer optimizer_from_string(const std::string& name);

struct LrMilestone {
  int epoch = 0;        // applied at the start of this epoch (0-based)
  double factor = 1.0;  // multiplicative
};

struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd;
  double learning_rate = 0.1;
  double momentum = 0.0;
  int batch_size = 0;  // 0 = full batch
  int epochs = 1;
  std::uint64_t seed = 0;
  std::vector<LrMilestone> lr_decay;
  // Full-batch runs stop early once ||grad|| <= grad_tol. 0 disables.
  double grad_tol = 0.0;

  void validate() const;
  double lr_at(int epoch) const;
};

struct TrainResult {
  ParamVector params;
  std::vector<double> epoch_costs;  // mean minibatch objective per epoch
  std::uint64_t batch_order_digest = 0;
  int epochs_run = 0;
  double final_grad_norm = -1.0;  // only computed for full-batch runs
};

/// Row order for `epoch` of a run seeded with `seed`. Depends only on
/// (seed, epoch, n), so a longer run with the same seed replays a shorter one.
std::vector<int> epoch_order(std::uint64_t seed, int epoch, int n);

TrainResult train(const Objective& objective, const ParamVector& init, const TrainConfig& config,
                  const NetworkSpec& spec, const Dataset& data);

struct BaseRun {
  ParamVector init;    // theta^0
  ParamVector params;  // theta^s
  TrainConfig config;
  std::uint64_t init_seed = 0;
  TrainResult result;
};

/// Trains the base network on the full dataset from init_params(spec, init_seed).
BaseRun train_base(const NetworkSpec& spec, const Dataset& data, const TrainConfig& config,
                   std::uint64_t init_seed);

struct ProtocolConfig {
  double retrain_fraction = 0.5;   // retraining budget as a fraction of the base epochs
  double bregman_lr_factor = 0.1;  // learning-rate multiplier for both Bregman runs
  std::uint64_t retrain_seed = 1;  // batch order for the warm-started runs
  double damping = 1e-3;
  std::optional<double> epsilon;   // per removed example; default 1/N
};

int retrain_epochs(const BaseRun& base, const ProtocolConfig& protocol);

/// Config for a warm-started run: base optimizer at the learning rate the base
/// run finished with, K * retrain_fraction epochs, retrain_seed ordering.
TrainConfig retrain_config(const BaseRun& base, const ProtocolConfig& protocol, bool bregman);

struct ResponseSet {
  ParamVector cold;
  ParamVector warm;
  ParamVector proximal;
  ParamVector pbrf;
  ParamVector linearized_pbrf;

  const ParamVector& at(ObjectiveTag tag) const;
};

/// One rung of the protocol: the cold run restarts from theta^0 with the base
/// seed for K + retrain epochs, every other run starts at theta^s with
/// retrain_config.
ParamVector protocol_run(ObjectiveTag tag, const BaseRun& base, const ProtocolConfig& protocol,
                         const NetworkSpec& spec, const Dataset& data, const std::vector<std::int64_t>& removed,
                         std::shared_ptr<const AnchorState> anchor = nullptr);

/// Optima of the five retraining objectives for one removal. Training errors
/// are rethrown with the failing tag in the message.
ResponseSet six_way_protocol(const BaseRun& base, const ProtocolConfig& protocol,
                             const NetworkSpec& spec, const Dataset& data,
                             const std::vector<std::int64_t>& removed,
                             std::shared_ptr<const AnchorState> anchor = nullptr);

}  // namespace pbrf
