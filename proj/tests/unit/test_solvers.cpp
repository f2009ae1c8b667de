#include <doctest.h>

#include "oracles.hpp"
#include "pbrf/error.hpp"
#include "pbrf/solvers.hpp"

using namespace pbrf;

namespace {

Matrix diag2(double a, double b) {
  Matrix C = Matrix::Zero(2, 2);
  C(0, 0) = a;
  C(1, 1) = b;
  return C;
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("solve_exact: diagonal system") {
  const auto r = solve_exact(CurvatureOperator::from_matrix(diag2(2, 4), 0.0), vec2(2, 4));
  CHECK((r.solution - vec2(1, 1)).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(r.residual_norm <= 1e-15);
}

TEST_CASE("solve_exact: heavy damping approaches v / damping") {
  const Matrix C = oracle::random_spd(10, 3);
  const double lambda = 1e6 * C.norm();
  const Vector v = oracle::random_vector(10, 4);
  const auto r = solve_exact(CurvatureOperator::from_matrix(C, lambda), v);
  CHECK(oracle::rel_err(r.solution, v / lambda) <= 1e-6);
}

TEST_CASE("solve_exact: zero right-hand side") {
  CHECK(solve_exact(CurvatureOperator::from_matrix(oracle::random_spd(5, 1), 0.0), Vector::Zero(5)).solution.isZero(0.0));
}

TEST_CASE("solve_exact: singular system names the smallest eigenvalue") {
  try {
    solve_exact(CurvatureOperator::from_matrix(diag2(1, 0), 0.0), vec2(1, 1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::singularity);
    CHECK(std::string(e.what()).find("eigenvalue") != std::string::npos);
  }
}

TEST_CASE("solve_exact: dimension cap") {
  CHECK(kind_of([] { solve_exact(CurvatureOperator::from_matrix(oracle::random_spd(6, 1), 0.0), Vector::Ones(6), 5); }) ==
        ErrorKind::configuration);
}

TEST_CASE("ExactSolver: factorization reused across right-hand sides") {
  const Matrix C = oracle::random_spd(20, 5);
  const auto op = CurvatureOperator::from_matrix(C, 0.01);
  const ExactSolver solver(op);
  const auto built = op.applications();
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Vector v = oracle::random_vector(20, 10 + s);
    const Vector x = solver.solve(v).solution;
    CHECK(oracle::rel_err((C + 0.01 * Matrix::Identity(20, 20)) * x, v) <= 1e-12);
  }
  CHECK(op.applications() - built <= 4);
}

TEST_CASE("solve_cg: diagonal system terminates in two iterations") {
  const auto r = solve_cg(CurvatureOperator::from_matrix(diag2(2, 4), 0.0), vec2(2, 4));
  CHECK(r.iterations <= 2);
  CHECK((r.solution - vec2(1, 1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("solve_cg: zero right-hand side returns zero after no iterations") {
  const auto r = solve_cg(CurvatureOperator::from_matrix(oracle::random_spd(4, 2), 0.1), Vector::Zero(4));
  CHECK(r.iterations == 0);
  CHECK(r.solution.isZero(0.0));
}

TEST_CASE("solve_cg: matches the exact solver on random PD systems") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Eigen::Index n = 50 + static_cast<Eigen::Index>(s) * 15;
    const auto op = CurvatureOperator::from_matrix(oracle::random_spd(n, 100 + s), 1e-3);
    const Vector v = oracle::random_vector(n, 200 + s);
    const auto cg = solve_cg(op, v, static_cast<int>(10 * n));
    CHECK(oracle::rel_err(cg.solution, solve_exact(op, v).solution) <= 1e-8);
    CHECK(cg.residual_norm <= 1e-9 * v.norm());
  }
}

TEST_CASE("solve_cg: indefinite operator is detected") {
  CHECK(kind_of([] { solve_cg(CurvatureOperator::from_matrix(diag2(1, -1), 0.0), vec2(1, 1)); }) ==
        ErrorKind::indefinite);
}

TEST_CASE("solve_cg: iteration cap is honoured") {
  const auto op = CurvatureOperator::from_matrix(oracle::random_spd(40, 3, 1e-3), 0.0);
  const auto r = solve_cg(op, oracle::random_vector(40, 4), 3, 1e-14);
  CHECK(r.iterations == 3);
  CHECK(r.residual_norm > 0.0);
}

TEST_CASE("solve_lissa: scalar case converges to the geometric limit") {
  Matrix C(1, 1);
  C << 2.0;
  Vector v(1);
  v << 3.0;
  LissaParams p;
  p.depth = 60;
  p.scale = 4.0;
  const auto r = solve_lissa(CurvatureOperator::from_matrix(C, 0.0), v, p);
  CHECK(std::abs(r.solution(0) - 1.5) <= 1e-9);
}

TEST_CASE("solve_lissa: depth zero returns v / scale") {
  const Vector v = oracle::random_vector(5, 1);
  LissaParams p;
  p.depth = 0;
  p.scale = 8.0;
  const auto r = solve_lissa(CurvatureOperator::from_matrix(oracle::random_spd(5, 2), 0.1), v, p);
  CHECK((r.solution - v / 8.0).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("solve_lissa: matches the exact solver on a random PD system") {
  const auto op = CurvatureOperator::from_matrix(oracle::random_spd(50, 9), 1e-3);
  const Vector v = oracle::random_vector(50, 10);
  LissaParams p;
  p.depth = 5000;
  p.scale = 10.0;
  CHECK(oracle::rel_err(solve_lissa(op, v, p).solution, solve_exact(op, v).solution) <= 1e-3);
}

TEST_CASE("solve_lissa: too small a scale is reported as divergence") {
  LissaParams p;
  p.scale = 0.5;
  p.depth = 200;
  CHECK(kind_of([&] { solve_lissa(CurvatureOperator::from_matrix(diag2(2, 4), 0.0), vec2(1, 1), p); }) ==
        ErrorKind::scale_too_small);
}

TEST_CASE("solve_lissa: stochastic mode with a full batch equals deterministic mode") {
  const NetworkSpec spec{{3, 5, 2}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.01};
  const Dataset d = oracle::classification_data(24, 3, 2, 6);
  const auto op = CurvatureOperator::for_model(init_params(spec, 1), spec, d, CurvatureKind::gnh, 0.1);
  const Vector v = oracle::random_vector(spec.param_count(), 7);
  LissaParams p;
  p.depth = 300;
  p.scale = 10.0;
  p.seed = 3;
  const auto det = solve_lissa(op, v, p);
  p.batch_size = 24;
  const auto sto = solve_lissa(op, v, p);
  CHECK(det.solution == sto.solution);
}

TEST_CASE("solve_lissa: seeded stochastic runs are reproducible and repeats run in any job count") {
  const NetworkSpec spec{{3, 4, 2}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.0};
  const Dataset d = oracle::classification_data(30, 3, 2, 8);
  const auto op = CurvatureOperator::for_model(init_params(spec, 2), spec, d, CurvatureKind::gnh, 0.1);
  const Vector v = oracle::random_vector(spec.param_count(), 9);
  LissaParams p;
  p.depth = 200;
  p.scale = 10.0;
  p.batch_size = 5;
  p.repeats = 4;
  p.seed = 11;
  const auto a = solve_lissa(op, v, p, 1), b = solve_lissa(op, v, p, 3);
  CHECK(a.solution == b.solution);
  p.seed = 12;
  CHECK_FALSE(solve_lissa(op, v, p).solution == a.solution);
}

TEST_CASE("property: solvers agree pairwise on small PD systems") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto op = CurvatureOperator::from_matrix(oracle::random_spd(30, 300 + s), 1e-3);
    const Vector v = oracle::random_vector(30, 400 + s);
    LissaParams p;
    p.scale = 10.0;
    const Vector ex = solve_exact(op, v).solution;
    CHECK(oracle::rel_err(solve_cg(op, v, 300).solution, ex) <= 1e-8);
    CHECK(oracle::rel_err(solve_lissa(op, v, p).solution, ex) <= 1e-3);
  }
}

TEST_CASE("property: solutions are linear in the right-hand side") {
  const auto op = CurvatureOperator::from_matrix(oracle::random_spd(25, 5), 0.01);
  const Vector v = oracle::random_vector(25, 6);
  LissaParams p;
  p.scale = 10.0;
  p.depth = 2000;
  for (double a : {-2.0, 0.5, 3.0}) {
    CHECK(oracle::rel_err(solve_exact(op, a * v).solution, a * solve_exact(op, v).solution) <= 1e-12);
    CHECK(oracle::rel_err(solve_cg(op, a * v, 250).solution, a * solve_cg(op, v, 250).solution) <= 1e-9);
    CHECK(oracle::rel_err(solve_lissa(op, a * v, p).solution, a * solve_lissa(op, v, p).solution) <= 1e-12);
  }
}

TEST_CASE("property: more damping gives a shorter solution") {
  const Matrix C = oracle::random_spd(20, 8, 0.0);
  const Vector v = oracle::random_vector(20, 9);
  double previous = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0}) {
    const double norm = solve_exact(CurvatureOperator::from_matrix(C, lambda), v).solution.norm();
    CHECK(norm < previous);
    previous = norm;
  }
}

TEST_CASE("property: model curvature operators are linear, symmetric and PD with damping") {
  const NetworkSpec spec{{3, 6, 3}, {Activation::tanh}, LossKind::softmax_cross_entropy, 0.0};
  const Dataset d = oracle::classification_data(20, 3, 3, 12);
  const ParamVector t = init_params(spec, 5);
  for (auto kind : {CurvatureKind::gnh, CurvatureKind::hessian}) {
    const auto op = CurvatureOperator::for_model(t, spec, d, kind, 0.1);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Vector u = oracle::random_vector(t.size(), 20 + s), v = oracle::random_vector(t.size(), 30 + s);
      CHECK(oracle::rel_err(op.apply(u + 2.0 * v), op.apply(u) + 2.0 * op.apply(v)) <= 1e-12);
      CHECK(std::abs(u.dot(op.apply(v)) - v.dot(op.apply(u))) <= 1e-10);
      if (kind == CurvatureKind::gnh) CHECK(v.dot(op.apply(v)) > 0.0);
    }
  }
}

TEST_CASE("tune_lissa_scale: picks the smallest stable grid scale") {
  const auto op = CurvatureOperator::from_matrix(diag2(30, 1), 0.0);
  LissaParams p;
  p.depth = 3000;
  const auto t = tune_lissa_scale(op, vec2(1, 1), p, {10, 25, 50, 100}, 1e-3);
  CHECK(t.scale == 25.0);
  REQUIRE(t.trials.size() == 4);
  CHECK(t.trials[0].diverged);
  CHECK_FALSE(t.trials[1].diverged);
  CHECK(t.trials[1].rel_error <= 1e-3);
}

TEST_CASE("tune_lissa_scale: no qualifying scale is a tuning error") {
  const auto op = CurvatureOperator::from_matrix(diag2(1000, 1), 0.0);
  LissaParams p;
  p.depth = 200;
  try {
    tune_lissa_scale(op, vec2(1, 1), p, default_lissa_grid(), 1e-3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::tuning);
    CHECK(std::string(e.what()).find("500") != std::string::npos);
  }
}

TEST_CASE("default LiSSA grid") {
  CHECK(default_lissa_grid() == std::vector<double>{10, 25, 50, 100, 150, 200, 250, 300, 400, 500});
}
