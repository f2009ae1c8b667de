#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "pbrf/data.hpp"
#include "pbrf/error.hpp"
#include "pbrf/train.hpp"

using namespace pbrf;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / ("pbrf_test_" + name);
  std::ofstream(path) << body;
  return path.string();
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

TEST_CASE("load_csv: three rows with two features and a target") {
  const auto path = write_temp("basic.csv", "a,b,y\n1,2,3\n4,5,6\n7.5,-8,9e-1\n");
  const Dataset d = load_csv(path, CsvSchema{{"a", "b"}, {"y"}, Task::regression, 0});
  CHECK(d.size() == 3);
  CHECK(d.input_dim() == 2);
  CHECK(d.inputs()(2, 0) == 7.5);
  CHECK(d.inputs()(2, 1) == -8.0);
  CHECK(d.targets()(2, 0) == 0.9);
  CHECK(d.ids() == std::vector<std::int64_t>{0, 1, 2});
}

TEST_CASE("load_csv: empty feature list takes every other column") {
  const auto path = write_temp("implicit.csv", "y,a,b\n0,1,2\n1,3,4\n");
  const Dataset d = load_csv(path, CsvSchema{{}, {"y"}, Task::classification, 0});
  CHECK(d.input_dim() == 2);
  CHECK(d.num_classes() == 2);
  CHECK(d.labels() == std::vector<int>{0, 1});
}

TEST_CASE("load_csv: header-only file is empty data") {
  const auto path = write_temp("header.csv", "a,b,y\n");
  CHECK(kind_of([&] { load_csv(path, CsvSchema{{"a", "b"}, {"y"}, Task::regression, 0}); }) ==
        ErrorKind::empty_data);
}

TEST_CASE("load_csv: NaN cell is a data error naming the cell") {
  const auto path = write_temp("nan.csv", "a,b,y\n1,2,3\n4,NaN,6\n");
  try {
    load_csv(path, CsvSchema{{"a", "b"}, {"y"}, Task::regression, 0});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
    const std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
  }
}

TEST_CASE("load_csv: malformed input is an ingestion error") {
  const auto ragged = write_temp("ragged.csv", "a,b,y\n1,2\n");
  const auto text = write_temp("text.csv", "a,b,y\n1,x,3\n");
  const CsvSchema schema{{"a", "b"}, {"y"}, Task::regression, 0};
  CHECK(kind_of([&] { load_csv(ragged, schema); }) == ErrorKind::ingestion);
  CHECK(kind_of([&] { load_csv(text, schema); }) == ErrorKind::ingestion);
  CHECK(kind_of([&] { load_csv("/nonexistent/pbrf.csv", schema); }) == ErrorKind::ingestion);
  CHECK(kind_of([&] { load_csv(text, CsvSchema{{"a", "q"}, {"y"}, Task::regression, 0}); }) ==
        ErrorKind::ingestion);
}

TEST_CASE("normalize: two-point column maps to -1 and 1") {
  Matrix X(2, 1);
  X << 1.0, 3.0;
  const auto [d, norm] = normalize(Dataset::regression(X, Matrix::Zero(2, 1)));
  CHECK(d.inputs()(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(d.inputs()(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(norm.input_mean(0) == 2.0);
  CHECK(norm.input_scale(0) == 1.0);
}

TEST_CASE("normalize: constant column maps to zero") {
  Matrix X(3, 2);
  X << 5, 1, 5, 2, 5, 4;
  const auto [d, norm] = normalize(Dataset::regression(X, Matrix::Zero(3, 1)));
  CHECK(d.inputs().col(0).isZero(0.0));
}

TEST_CASE("normalize: moments, targets and idempotence") {
  const Dataset raw = Dataset::regression(oracle::random_matrix(50, 4, 3, 5.0).array() + 2.0,
                                          oracle::random_matrix(50, 2, 4, 3.0).array() - 1.0);
  const Dataset d = normalize(raw).first;
  for (const Matrix* M : {&d.inputs(), &d.targets()}) {
    for (Eigen::Index c = 0; c < M->cols(); ++c) {
      const double mean = M->col(c).mean();
      const double var = (M->col(c).array() - mean).square().mean();
      CHECK(std::abs(mean) <= 1e-12);
      CHECK(std::abs(var - 1.0) <= 1e-10);
    }
  }
  const Dataset twice = normalize(d).first;
  CHECK((twice.inputs() - d.inputs()).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK((twice.targets() - d.targets()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("normalize: applying fitted statistics to the training split reproduces it") {
  const Dataset raw = synth_regression(30, 3, 9);
  const auto [d, norm] = normalize(raw);
  const Dataset again = apply_normalization(raw, norm);
  CHECK((again.inputs() - d.inputs()).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("normalize: a single row is insufficient") {
  CHECK(kind_of([] { normalize(synth_regression(1, 2, 1)); }) == ErrorKind::insufficient_data);
}

TEST_CASE("corrupt_labels: fraction zero leaves the data unchanged") {
  const Dataset d = synth_classification(40, 3, 4, 2);
  const auto [c, rec] = corrupt_labels(d, 0.0, 5);
  CHECK(rec.corrupted_ids.empty());
  CHECK(c == d);
}

TEST_CASE("corrupt_labels: exact count, changed labels, determinism, restoration") {
  const Dataset d = synth_classification(100, 3, 3, 7);
  const auto [c, rec] = corrupt_labels(d, 0.1, 11);
  REQUIRE(rec.corrupted_ids.size() == 10);
  for (auto id : rec.corrupted_ids) {
    const auto row = static_cast<std::size_t>(c.row_of(id));
    CHECK(c.labels()[row] != d.labels()[row]);
    CHECK(rec.original_labels.at(id) == d.labels()[row]);
  }
  int changed = 0;
  for (std::size_t i = 0; i < d.labels().size(); ++i) changed += c.labels()[i] != d.labels()[i];
  CHECK(changed == 10);
  const auto [c2, rec2] = corrupt_labels(d, 0.1, 11);
  CHECK(rec2.corrupted_ids == rec.corrupted_ids);
  CHECK(rec2.original_labels == rec.original_labels);
  CHECK(c2 == c);
  CHECK(restore_labels(c, rec) == d);
}

TEST_CASE("property: corruption count is round(fraction * N) across sizes") {
  for (int n : {7, 33, 120}) {
    for (double f : {0.05, 0.25, 0.5, 1.0}) {
      const Dataset d = synth_classification(n, 2, 2, static_cast<std::uint64_t>(n));
      const auto [c, rec] = corrupt_labels(d, f, 3);
      CHECK(rec.corrupted_ids.size() == static_cast<std::size_t>(std::llround(f * n)));
      CHECK(restore_labels(c, rec) == d);
    }
  }
}

TEST_CASE("corrupt_labels: regression data is unsupported") {
  CHECK(kind_of([] { corrupt_labels(synth_regression(10, 2, 1), 0.1, 1); }) == ErrorKind::unsupported_task);
}

TEST_CASE("remove_examples: empty set, single id, all ids, unknown id") {
  const Dataset d = synth_regression(5, 2, 4);
  CHECK(remove_examples(d, std::vector<std::int64_t>{}) == d);

  const Dataset r = remove_examples(d, std::vector<std::int64_t>{3});
  CHECK(r.ids() == std::vector<std::int64_t>{0, 1, 2, 4});
  CHECK(r.inputs().row(3) == d.inputs().row(4));
  CHECK_FALSE(r.contains(3));

  const Dataset none = remove_examples(d, std::vector<std::int64_t>{0, 1, 2, 3, 4});
  CHECK(none.size() == 0);
  CHECK(kind_of([&] { none.require_nonempty(); }) == ErrorKind::empty_data);

  CHECK(kind_of([&] { remove_examples(d, std::vector<std::int64_t>{9}); }) == ErrorKind::lookup);
}

TEST_CASE("property: removing one example drops exactly that id") {
  const Dataset d = synth_classification(25, 3, 3, 8);
  for (std::int64_t id = 0; id < 25; id += 3) {
    const Dataset r = remove_examples(d, std::vector<std::int64_t>{id});
    CHECK(r.size() == 24);
    CHECK_FALSE(r.contains(id));
    for (auto other : r.ids()) CHECK(r.labels()[static_cast<std::size_t>(r.row_of(other))] ==
                                     d.labels()[static_cast<std::size_t>(d.row_of(other))]);
  }
}

TEST_CASE("synthetic generators: determinism and single-row output") {
  CHECK(synth_classification(30, 4, 3, 5) == synth_classification(30, 4, 3, 5));
  CHECK(synth_regression(30, 4, 5) == synth_regression(30, 4, 5));
  CHECK_FALSE(synth_regression(30, 4, 5) == synth_regression(30, 4, 6));
  CHECK(synth_classification(1, 2, 2, 1).size() == 1);
  CHECK(synth_regression(1, 2, 1).size() == 1);
  CHECK(kind_of([] { synth_classification(0, 2, 2, 1); }) == ErrorKind::configuration);
}

TEST_CASE("synth_classification: well separated classes are learnable by a logistic model") {
  const Dataset d = normalize(synth_classification(200, 5, 2, 21, 6.0)).first;
  const NetworkSpec spec{{5, 1}, {}, LossKind::binary_cross_entropy, 0.0};
  TrainConfig cfg;
  cfg.optimizer = Optimizer::gd;
  cfg.learning_rate = 0.5;
  cfg.epochs = 500;
  const BaseRun base = train_base(spec, d, cfg, 1);
  const Matrix out = forward(base.params, spec, d.inputs());
  int correct = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) correct += (out(i, 0) > 0.0) == (d.labels()[static_cast<std::size_t>(i)] == 1);
  CHECK(correct >= 190);
}

TEST_CASE("subsample keeps ids; split_tail renumbers the test rows") {
  const Dataset d = synth_regression(40, 2, 3);
  const Dataset s = subsample(d, 0.25, 9);
  CHECK(s.size() == 10);
  CHECK(std::is_sorted(s.ids().begin(), s.ids().end()));
  CHECK(subsample(d, 0.25, 9) == s);
  const auto [train, test] = split_tail(d, 10);
  CHECK(train.size() == 30);
  CHECK(test.ids().front() == 0);
  CHECK(test.inputs().row(0) == d.inputs().row(30));
  CHECK(train.ids().back() == 29);
  CHECK(kind_of([&] { split_tail(d, 40); }) == ErrorKind::configuration);
}
