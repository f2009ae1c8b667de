#include <doctest.h>

#include "oracles.hpp"
#include "pbrf/decompose.hpp"
#include "pbrf/error.hpp"
#include "pbrf/objective.hpp"
#include "pbrf/train.hpp"

using namespace pbrf;

namespace {

constexpr ObjectiveTag kAllTags[] = {ObjectiveTag::cold_downweighted, ObjectiveTag::warm_downweighted,
                                     ObjectiveTag::proximal, ObjectiveTag::proximal_bregman,
                                     ObjectiveTag::linearized_proximal_bregman};

Matrix augmented(const Matrix& X) {
  Matrix A(X.rows(), X.cols() + 1);
  A << X, Vector::Ones(X.rows());
  return A;
}

TrainConfig gd_config(double lr, int epochs, double grad_tol = 0.0) {
  TrainConfig c;
  c.optimizer = Optimizer::gd;
  c.learning_rate = lr;
  c.epochs = epochs;
  c.grad_tol = grad_tol;
  return c;
}

}  // namespace

TEST_CASE("objective: gradients of all five tags match finite differences") {
  struct Case {
    NetworkSpec spec;
    Dataset data;
  };
  const std::vector<Case> cases = {
      {{{3, 5, 2}, {Activation::tanh}, LossKind::squared_error, 0.02}, oracle::regression_data(14, 3, 2, 1)},
      {{{3, 4, 3}, {Activation::sigmoid}, LossKind::softmax_cross_entropy, 0.01},
       oracle::classification_data(15, 3, 3, 2)},
      {{{4, 5, 1}, {Activation::tanh}, LossKind::binary_cross_entropy, 0.0}, oracle::classification_data(12, 4, 2, 3)},
  };
  for (const auto& c : cases) {
    const ParamVector anchor_params = oracle::random_vector(c.spec.param_count(), 7, 0.6);
    const auto anchor = make_anchor(anchor_params, c.spec, c.data);
    for (auto tag : kAllTags) {
      const Objective obj = make_objective(tag, c.spec, c.data, {2, 5}, std::nullopt, 0.3, anchor);
      for (std::uint64_t s = 0; s < 3; ++s) {
        const ParamVector t = anchor_params + oracle::random_vector(anchor_params.size(), 80 + s, 0.3);
        const Vector fd = oracle::fd_gradient(
            [&](const Vector& p) { return evaluate_objective(obj, p, c.spec, c.data); }, t);
        const ParamVector g = gradient_of_objective(obj, t, c.spec, c.data);
        CHECK_MESSAGE(oracle::rel_err(g, fd) <= 1e-5, to_string(tag));
      }
    }
  }
}

TEST_CASE("objective: PBRF vanishes with zero gradient at the anchor when epsilon is zero") {
  const NetworkSpec spec{{3, 6, 3}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.05};
  const Dataset d = oracle::classification_data(20, 3, 3, 4);
  const ParamVector s = oracle::random_vector(spec.param_count(), 5);
  const auto anchor = make_anchor(s, spec, d);
  for (auto tag : {ObjectiveTag::proximal_bregman, ObjectiveTag::linearized_proximal_bregman}) {
    const Objective obj = make_objective(tag, spec, d, {1}, 0.0, 1e-3, anchor);
    CHECK(evaluate_objective(obj, s, spec, d) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
    CHECK(gradient_of_objective(obj, s, spec, d).norm() <= 1e-10);
  }
}

TEST_CASE("objective: cold objective with epsilon zero is the training cost") {
  const NetworkSpec spec{{2, 4, 1}, {Activation::relu}, LossKind::squared_error, 0.1};
  const Dataset d = oracle::regression_data(10, 2, 1, 6);
  const ParamVector t = oracle::random_vector(spec.param_count(), 7);
  const Objective obj = make_objective(ObjectiveTag::cold_downweighted, spec, d, {0, 3}, 0.0, 0.0, nullptr);
  CHECK(evaluate_objective(obj, t, spec, d) == doctest::Approx(cost_and_grad(t, spec, d).cost).epsilon(1e-14));
}

TEST_CASE("objective: downweighting subtracts epsilon times the removed losses") {
  const NetworkSpec spec{{2, 3, 1}, {Activation::tanh}, LossKind::squared_error, 0.0};
  const Dataset d = oracle::regression_data(8, 2, 1, 8);
  const ParamVector t = oracle::random_vector(spec.param_count(), 9);
  const Objective obj = make_objective(ObjectiveTag::warm_downweighted, spec, d, {2, 6}, std::nullopt, 0.0, nullptr);
  CHECK(obj.epsilon == 1.0 / 8.0);
  const Matrix out = forward(t, spec, d.inputs());
  const double removed = 0.5 * std::pow(out(2, 0) - d.targets()(2, 0), 2) + 0.5 * std::pow(out(6, 0) - d.targets()(6, 0), 2);
  CHECK(evaluate_objective(obj, t, spec, d) ==
        doctest::Approx(cost_and_grad(t, spec, d).cost - removed / 8.0).epsilon(1e-13));
}

TEST_CASE("objective: squared-error Bregman term is half the mean squared output change") {
  const NetworkSpec spec{{3, 5, 2}, {Activation::tanh}, LossKind::squared_error, 0.0};
  const Dataset d = oracle::regression_data(12, 3, 2, 10);
  const ParamVector a = oracle::random_vector(spec.param_count(), 11);
  const ParamVector b = oracle::random_vector(spec.param_count(), 12);
  const Matrix diff = forward(a, spec, d.inputs()) - forward(b, spec, d.inputs());
  const double expected = 0.5 * diff.rowwise().squaredNorm().mean();
  CHECK(bregman_term(a, b, spec, d) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("objective: proximity term contributes damping times the displacement") {
  const NetworkSpec spec{{2, 3, 2}, {Activation::sigmoid}, LossKind::softmax_cross_entropy, 0.0};
  const Dataset d = oracle::classification_data(9, 2, 2, 13);
  const ParamVector s = oracle::random_vector(spec.param_count(), 14);
  const ParamVector t = oracle::random_vector(spec.param_count(), 15);
  const auto anchor = make_anchor(s, spec, d);
  const Objective with = make_objective(ObjectiveTag::proximal, spec, d, {}, 0.0, 0.7, anchor);
  const Objective without = make_objective(ObjectiveTag::proximal, spec, d, {}, 0.0, 0.0, anchor);
  const Vector diff = gradient_of_objective(with, t, spec, d) - gradient_of_objective(without, t, spec, d);
  CHECK((diff - 0.7 * (t - s)).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("objective: anchored tags without an anchor are configuration errors") {
  const NetworkSpec spec{{2, 1}, {}, LossKind::squared_error, 0.0};
  const Dataset d = oracle::regression_data(4, 2, 1, 1);
  for (auto tag : {ObjectiveTag::proximal, ObjectiveTag::proximal_bregman, ObjectiveTag::linearized_proximal_bregman}) {
    try {
      make_objective(tag, spec, d, {}, std::nullopt, 0.1, nullptr);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::configuration);
    }
  }
  CHECK_THROWS_AS(make_objective(ObjectiveTag::warm_downweighted, spec, d, {17}, std::nullopt, 0.0, nullptr), Error);
}

TEST_CASE("property: Bregman term is nonnegative for convex losses") {
  struct Case {
    NetworkSpec spec;
    Dataset data;
  };
  const std::vector<Case> cases = {
      {{{3, 4, 3}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.0}, oracle::classification_data(10, 3, 3, 1)},
      {{{3, 4, 1}, {Activation::relu}, LossKind::binary_cross_entropy, 0.0}, oracle::classification_data(10, 3, 2, 2)},
      {{{3, 4, 2}, {Activation::sigmoid}, LossKind::squared_error, 0.0}, oracle::regression_data(10, 3, 2, 3)},
  };
  for (const auto& c : cases)
    for (std::uint64_t s = 0; s < 50; ++s) {
      const ParamVector a = oracle::random_vector(c.spec.param_count(), 1000 + s, 2.0);
      const ParamVector b = oracle::random_vector(c.spec.param_count(), 2000 + s, 2.0);
      CHECK(bregman_term(a, b, c.spec, c.data) >= -1e-14);
    }
}

TEST_CASE("property: linearized PBRF gradient is affine in the parameters") {
  const NetworkSpec spec{{3, 5, 3}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.02};
  const Dataset d = oracle::classification_data(16, 3, 3, 5);
  const ParamVector s = oracle::random_vector(spec.param_count(), 6);
  const auto anchor = make_anchor(s, spec, d);
  const Objective obj =
      make_objective(ObjectiveTag::linearized_proximal_bregman, spec, d, {3}, std::nullopt, 0.1, anchor);
  for (std::uint64_t k = 0; k < 5; ++k) {
    const ParamVector t = oracle::random_vector(s.size(), 30 + k);
    const ParamVector dir = oracle::random_vector(s.size(), 40 + k);
    const Vector g0 = gradient_of_objective(obj, t, spec, d);
    const Vector g1 = gradient_of_objective(obj, t + dir, spec, d);
    const Vector g2 = gradient_of_objective(obj, t + 2.5 * dir, spec, d);
    CHECK(oracle::rel_err(g2 - g0, 2.5 * (g1 - g0)) <= 1e-10);
  }
}

TEST_CASE("train: full-batch gd on ridge regression reaches the closed form") {
  const Dataset d = oracle::regression_data(40, 5, 1, 17);
  const double l2 = 0.1;
  const NetworkSpec spec{{5, 1}, {}, LossKind::squared_error, l2};
  const Matrix A = augmented(d.inputs());
  const Matrix M = A.transpose() * A / 40.0 + l2 * Matrix::Identity(6, 6);
  const Vector exact = M.ldlt().solve(A.transpose() * d.targets().col(0) / 40.0);
  const BaseRun base = train_base(spec, d, gd_config(0.5, 20000, 1e-10), 3);
  CHECK((base.params - exact).norm() <= 1e-6);
  CHECK(base.result.final_grad_norm <= 1e-10);
  CHECK(base.result.epochs_run < 20000);
}

TEST_CASE("train: minibatch sgd is bit-identical for the same seed and differs across seeds") {
  const NetworkSpec spec{{3, 8, 2}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.0};
  const Dataset d = oracle::classification_data(50, 3, 2, 19);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.batch_size = 8;
  cfg.epochs = 10;
  cfg.seed = 4;
  const BaseRun a = train_base(spec, d, cfg, 2), b = train_base(spec, d, cfg, 2);
  CHECK(a.params == b.params);
  CHECK(a.result.batch_order_digest == b.result.batch_order_digest);
  CHECK(a.result.epoch_costs == b.result.epoch_costs);
  cfg.seed = 5;
  const BaseRun c = train_base(spec, d, cfg, 2);
  CHECK_FALSE(a.params == c.params);
  CHECK(a.result.batch_order_digest != c.result.batch_order_digest);
}

TEST_CASE("train: epoch orders are seeded permutations") {
  const auto o = epoch_order(9, 3, 20);
  auto sorted = o;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 20; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
  CHECK(epoch_order(9, 3, 20) == o);
  CHECK(epoch_order(9, 4, 20) != o);
}

TEST_CASE("train: cold retraining replays the base batch order") {
  const NetworkSpec spec{{2, 6, 1}, {Activation::tanh}, LossKind::squared_error, 0.0};
  const Dataset d = oracle::regression_data(30, 2, 1, 23);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.batch_size = 7;
  cfg.epochs = 6;
  cfg.seed = 8;
  const BaseRun base = train_base(spec, d, cfg, 5);
  ProtocolConfig protocol;
  protocol.retrain_seed = 99;
  protocol.epsilon = 0.0;
  // With nothing downweighted, the cold run is the base run continued with the base ordering.
  TrainConfig longer = cfg;
  longer.epochs = cfg.epochs + retrain_epochs(base, protocol);
  const ParamVector expected = train_base(spec, d, longer, 5).params;
  const ParamVector cold = protocol_run(ObjectiveTag::cold_downweighted, base, protocol, spec, d, {});
  CHECK(cold == expected);
}

TEST_CASE("train: warm start from a converged point does not move") {
  const Dataset d = oracle::regression_data(30, 3, 1, 29);
  const NetworkSpec spec{{3, 1}, {}, LossKind::squared_error, 0.05};
  const BaseRun base = train_base(spec, d, gd_config(0.5, 50000, 1e-12), 1);
  ProtocolConfig protocol;
  protocol.epsilon = 0.0;
  const ParamVector warm = protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, d, {});
  CHECK((warm - base.params).norm() <= 1e-8);
  const ParamVector warm_empty = protocol_run(ObjectiveTag::warm_downweighted, base, ProtocolConfig{}, spec, d, {});
  CHECK((warm_empty - base.params).norm() <= 1e-8);
}

TEST_CASE("train: divergence is reported with the epoch") {
  const Dataset d = oracle::regression_data(20, 3, 1, 31);
  const NetworkSpec spec{{3, 1}, {}, LossKind::squared_error, 0.0};
  try {
    train_base(spec, d, gd_config(1e3, 1000), 1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train: configuration validation") {
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = TrainConfig{};
  c.optimizer = Optimizer::gd;
  c.batch_size = 4;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("train: retraining schedule uses the final base learning rate") {
  BaseRun base;
  base.config.learning_rate = 0.4;
  base.config.epochs = 10;
  base.config.lr_decay = {{5, 0.5}, {8, 0.5}};
  ProtocolConfig p;
  p.retrain_fraction = 0.5;
  p.bregman_lr_factor = 0.1;
  p.retrain_seed = 77;
  const TrainConfig warm = retrain_config(base, p, false);
  const TrainConfig breg = retrain_config(base, p, true);
  CHECK(warm.learning_rate == doctest::Approx(0.1));
  CHECK(breg.learning_rate == doctest::Approx(0.01));
  CHECK(warm.epochs == 5);
  CHECK(warm.seed == 77);
  CHECK(warm.lr_decay.empty());
}

TEST_CASE("property: gd on an underdetermined least-squares problem finds the interpolant nearest init") {
  const int n = 20, p = 100;
  const Dataset d = oracle::regression_data(n, p, 1, 37);
  const NetworkSpec spec{{p, 1}, {}, LossKind::squared_error, 0.0};
  const BaseRun base = train_base(spec, d, gd_config(0.1, 200000, 1e-13), 41);
  const Matrix A = augmented(d.inputs());
  const Vector r = d.targets().col(0) - A * base.init;
  const Vector expected = base.init + A.completeOrthogonalDecomposition().pseudoInverse() * r;
  CHECK((base.params - expected).norm() <= 1e-6);
}

TEST_CASE("property: strongly convex problems give matching warm and cold optima") {
  const Dataset d = synth_classification(80, 4, 2, 43, 2.0);
  const NetworkSpec spec{{4, 1}, {}, LossKind::binary_cross_entropy, 0.05};
  const BaseRun base = train_base(spec, d, gd_config(1.0, 20000, 1e-10), 2);
  ProtocolConfig protocol;
  const ParamVector cold = protocol_run(ObjectiveTag::cold_downweighted, base, protocol, spec, d, {5});
  const ParamVector warm = protocol_run(ObjectiveTag::warm_downweighted, base, protocol, spec, d, {5});
  CHECK((cold - warm).norm() <= 1e-8);
}

TEST_CASE("six_way_protocol: logistic model responses agree") {
  const Dataset d = normalize(synth_classification(500, 20, 2, 47, 2.0)).first;
  const NetworkSpec spec{{20, 1}, {}, LossKind::binary_cross_entropy, 0.01};
  const BaseRun base = train_base(spec, d, gd_config(1.0, 20000, 1e-8), 3);
  ProtocolConfig protocol;
  protocol.bregman_lr_factor = 1.0;
  const ResponseSet r = six_way_protocol(base, protocol, spec, d, {11});
  const std::vector<const ParamVector*> all = {&r.cold, &r.warm, &r.proximal, &r.pbrf, &r.linearized_pbrf};
  for (const auto* a : all)
    for (const auto* b : all) CHECK(output_distance(*a, *b, spec, d) <= 1e-3);
  CHECK(output_distance(r.cold, base.params, spec, d) > 0.0);
}

TEST_CASE("six_way_protocol: failing runs name the objective") {
  const Dataset d = oracle::regression_data(20, 3, 1, 53);
  const NetworkSpec spec{{3, 1}, {}, LossKind::squared_error, 0.0};
  BaseRun base = train_base(spec, d, gd_config(0.1, 200), 1);
  base.config.learning_rate = 1e3;
  try {
    six_way_protocol(base, ProtocolConfig{}, spec, d, {0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
    CHECK(std::string(e.what()).find("cold_downweighted") != std::string::npos);
  }
}
