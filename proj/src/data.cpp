#include "pbrf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "pbrf/error.hpp"

namespace pbrf {

Dataset Dataset::regression(Matrix inputs, Matrix targets) {
  Dataset d;
  d.task_ = Task::regression;
  if (targets.rows() != inputs.rows())
    throw Error(ErrorKind::shape, "inputs and targets have different row counts");
  d.inputs_ = std::move(inputs);
  d.targets_ = std::move(targets);
  d.ids_.resize(d.inputs_.rows());
  std::iota(d.ids_.begin(), d.ids_.end(), std::int64_t{0});
  d.validate();
  return d;
}

Dataset Dataset::classification(Matrix inputs, std::vector<int> labels, int num_classes) {
  Dataset d;
  d.task_ = Task::classification;
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows())
    throw Error(ErrorKind::shape, "inputs and labels have different row counts");
  if (num_classes < 1) throw Error(ErrorKind::configuration, "num_classes must be >= 1");
  d.inputs_ = std::move(inputs);
  d.labels_ = std::move(labels);
  d.num_classes_ = num_classes;
  d.ids_.resize(d.inputs_.rows());
  std::iota(d.ids_.begin(), d.ids_.end(), std::int64_t{0});
  d.validate();
  return d;
}

void Dataset::validate() {
  if (!inputs_.allFinite()) throw Error(ErrorKind::data, "non-finite input value");
  if (task_ == Task::regression && !targets_.allFinite())
    throw Error(ErrorKind::data, "non-finite target value");
  for (int label : labels_)
    if (label < 0 || label >= num_classes_)
      throw Error(ErrorKind::data, "label " + std::to_string(label) + " outside [0, " +
                                       std::to_string(num_classes_) + ")");
  auto& index = index_;
  index.clear();
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index.emplace(ids_[i], static_cast<Eigen::Index>(i)).second)
      throw Error(ErrorKind::data, "duplicate row id " + std::to_string(ids_[i]));
  }
}

Eigen::Index Dataset::row_of(std::int64_t id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorKind::lookup, "unknown example id " + std::to_string(id));
  return it->second;
}

bool Dataset::contains(std::int64_t id) const { return index_.count(id) > 0; }

Matrix Dataset::batch_inputs(std::span<const int> rows) const {
  Matrix X(inputs_.cols(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) X.col(j) = inputs_.row(rows[j]).transpose();
  return X;
}

TargetBatch Dataset::batch_targets(std::span<const int> rows, LossKind loss) const {
  TargetBatch t;
  const auto B = static_cast<Eigen::Index>(rows.size());
  if (task_ == Task::regression) {
    if (loss == LossKind::softmax_cross_entropy)
      throw Error(ErrorKind::unsupported_task, "softmax cross-entropy needs a classification dataset");
    t.values.resize(targets_.cols(), B);
    for (Eigen::Index j = 0; j < B; ++j) t.values.col(j) = targets_.row(rows[j]).transpose();
    return t;
  }
  switch (loss) {
    case LossKind::softmax_cross_entropy:
      t.labels.reserve(rows.size());
      for (int r : rows) t.labels.push_back(labels_[r]);
      break;
    case LossKind::binary_cross_entropy:
      if (num_classes_ > 2)
        throw Error(ErrorKind::unsupported_task, "binary cross-entropy needs at most 2 classes");
      t.values.resize(1, B);
      for (Eigen::Index j = 0; j < B; ++j) t.values(0, j) = labels_[rows[j]];
      break;
    case LossKind::squared_error:
      // One-hot regression onto class indicators.
      t.values = Matrix::Zero(num_classes_, B);
      for (Eigen::Index j = 0; j < B; ++j) t.values(labels_[rows[j]], j) = 1.0;
      break;
  }
  return t;
}

std::vector<int> Dataset::all_rows() const {
  std::vector<int> rows(static_cast<std::size_t>(size()));
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

TargetBatch Dataset::all_targets(LossKind loss) const {
  const auto rows = all_rows();
  return batch_targets(rows, loss);
}

void Dataset::require_nonempty() const {
  if (empty()) throw Error(ErrorKind::empty_data, "dataset has no rows");
}

Dataset Dataset::with_labels(std::vector<int> labels) const {
  if (task_ != Task::classification)
    throw Error(ErrorKind::unsupported_task, "labels only exist for classification data");
  Dataset d = *this;
  d.labels_ = std::move(labels);
  d.validate();
  return d;
}

Dataset Dataset::with_ids(std::vector<std::int64_t> ids) const {
  if (static_cast<Eigen::Index>(ids.size()) != size())
    throw Error(ErrorKind::shape, "id count does not match row count");
  Dataset d = *this;
  d.ids_ = std::move(ids);
  d.validate();
  return d;
}

bool Dataset::operator==(const Dataset& o) const {
  return task_ == o.task_ && num_classes_ == o.num_classes_ && labels_ == o.labels_ &&
         ids_ == o.ids_ && inputs_.rows() == o.inputs_.rows() && inputs_.cols() == o.inputs_.cols() &&
         inputs_ == o.inputs_ && targets_.rows() == o.targets_.rows() &&
         targets_.cols() == o.targets_.cols() && targets_ == o.targets_;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\"\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ingestion, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::empty_data, "'" + path + "' has no header");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  auto column_of = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::ingestion, "column '" + name + "' not in header of '" + path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  if (schema.target_columns.empty()) throw Error(ErrorKind::configuration, "CSV schema names no target column");
  std::vector<std::size_t> target_cols;
  for (const auto& name : schema.target_columns) target_cols.push_back(column_of(name));
  if (schema.task == Task::classification && target_cols.size() != 1)
    throw Error(ErrorKind::configuration, "classification CSV needs exactly one label column");
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (std::find(target_cols.begin(), target_cols.end(), c) == target_cols.end()) feature_cols.push_back(c);
  } else {
    for (const auto& name : schema.feature_columns) feature_cols.push_back(column_of(name));
  }

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw Error(ErrorKind::ingestion, path + ": row " + std::to_string(row_no) + " has " +
                                            std::to_string(cells.size()) + " cells, header has " +
                                            std::to_string(header.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string cell = trim(cells[c]);
      double v = 0.0;
      const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size())
        throw Error(ErrorKind::ingestion, path + ": row " + std::to_string(row_no) + ", column '" +
                                              header[c] + "': cannot parse '" + cell + "'");
      if (!std::isfinite(v))
        throw Error(ErrorKind::data, path + ": row " + std::to_string(row_no) + ", column '" + header[c] +
                                         "' holds non-finite value '" + cell + "'");
      values[c] = v;
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw Error(ErrorKind::empty_data, "'" + path + "' has a header but no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix X(n, static_cast<Eigen::Index>(feature_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < feature_cols.size(); ++j) X(i, j) = rows[i][feature_cols[j]];

  if (schema.task == Task::regression) {
    Matrix T(n, static_cast<Eigen::Index>(target_cols.size()));
    for (Eigen::Index i = 0; i < n; ++i)
      for (std::size_t j = 0; j < target_cols.size(); ++j) T(i, j) = rows[i][target_cols[j]];
    return Dataset::regression(std::move(X), std::move(T));
  }
  std::vector<int> labels(rows.size());
  int max_label = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double v = rows[i][target_cols[0]];
    if (v != std::floor(v) || v < 0)
      throw Error(ErrorKind::data, path + ": row " + std::to_string(i + 2) + " label '" +
                                       std::to_string(v) + "' is not a nonnegative integer");
    labels[i] = static_cast<int>(v);
    max_label = std::max(max_label, labels[i]);
  }
  const int classes = schema.num_classes > 0 ? schema.num_classes : max_label + 1;
  return Dataset::classification(std::move(X), std::move(labels), classes);
}

namespace {

void column_stats(const Matrix& M, Vector& mean, Vector& scale) {
  const double n = static_cast<double>(M.rows());
  mean = M.colwise().mean().transpose();
  scale.resize(M.cols());
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    const double var = (M.col(j).array() - mean(j)).square().sum() / n;
    const double sd = std::sqrt(var);
    scale(j) = sd <= 1e-12 * (1.0 + std::abs(mean(j))) ? 0.0 : sd;
  }
}

Matrix standardize(const Matrix& M, const Vector& mean, const Vector& scale) {
  Matrix out(M.rows(), M.cols());
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    if (scale(j) == 0.0) {
      out.col(j).setZero();
    } else {
      out.col(j) = (M.col(j).array() - mean(j)) / scale(j);
    }
  }
  return out;
}

}  // namespace

std::pair<Dataset, Normalization> normalize(const Dataset& data) {
  if (data.size() < 2)
    throw Error(ErrorKind::insufficient_data, "normalization needs at least 2 rows, got " + std::to_string(data.size()));
  Normalization norm;
  column_stats(data.inputs(), norm.input_mean, norm.input_scale);
  if (data.task() == Task::regression) column_stats(data.targets(), norm.target_mean, norm.target_scale);
  return {apply_normalization(data, norm), norm};
}

Dataset apply_normalization(const Dataset& data, const Normalization& norm) {
  Matrix X = standardize(data.inputs(), norm.input_mean, norm.input_scale);
  Dataset out;
  if (data.task() == Task::regression) {
    Matrix T = norm.target_mean.size() == data.targets().cols()
                   ? standardize(data.targets(), norm.target_mean, norm.target_scale)
                   : data.targets();
    out = Dataset::regression(std::move(X), std::move(T));
  } else {
    out = Dataset::classification(std::move(X), data.labels(), data.num_classes());
  }
  return out.with_ids(data.ids());
}

std::pair<Dataset, CorruptionRecord> corrupt_labels(const Dataset& data, double fraction,
                                                    std::uint64_t seed) {
  if (data.task() != Task::classification)
    throw Error(ErrorKind::unsupported_task, "label corruption needs a classification dataset");
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw Error(ErrorKind::configuration, "corruption fraction must lie in [0, 1]");
  if (data.num_classes() < 2 && fraction > 0.0)
    throw Error(ErrorKind::unsupported_task, "label corruption needs at least 2 classes");
  const auto n = static_cast<std::size_t>(data.size());
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));

  std::mt19937_64 rng(seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  CorruptionRecord record;
  record.seed = seed;
  std::vector<int> labels = data.labels();
  std::uniform_int_distribution<int> other(0, std::max(0, data.num_classes() - 2));
  for (int row : chosen) {
    const std::int64_t id = data.ids()[row];
    const int original = labels[row];
    const int draw = other(rng);
    labels[row] = draw >= original ? draw + 1 : draw;
    record.corrupted_ids.push_back(id);
    record.original_labels[id] = original;
  }
  std::sort(record.corrupted_ids.begin(), record.corrupted_ids.end());
  return {data.with_labels(std::move(labels)), record};
}

Dataset restore_labels(const Dataset& data, const CorruptionRecord& record) {
  std::vector<int> labels = data.labels();
  for (const auto& [id, label] : record.original_labels) labels[data.row_of(id)] = label;
  return data.with_labels(std::move(labels));
}

namespace {

Dataset select_rows(const Dataset& data, const std::vector<int>& rows) {
  Matrix X(static_cast<Eigen::Index>(rows.size()), data.input_dim());
  std::vector<std::int64_t> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    X.row(i) = data.inputs().row(rows[i]);
    ids.push_back(data.ids()[rows[i]]);
  }
  if (data.task() == Task::regression) {
    Matrix T(static_cast<Eigen::Index>(rows.size()), data.targets().cols());
    for (std::size_t i = 0; i < rows.size(); ++i) T.row(i) = data.targets().row(rows[i]);
    return Dataset::regression(std::move(X), std::move(T)).with_ids(std::move(ids));
  }
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (int r : rows) labels.push_back(data.labels()[r]);
  return Dataset::classification(std::move(X), std::move(labels), data.num_classes()).with_ids(std::move(ids));
}

}  // namespace

Dataset remove_examples(const Dataset& data, std::span<const std::int64_t> ids) {
  std::vector<bool> drop(static_cast<std::size_t>(data.size()), false);
  for (std::int64_t id : ids) drop[data.row_of(id)] = true;
  std::vector<int> keep;
  for (std::size_t r = 0; r < drop.size(); ++r)
    if (!drop[r]) keep.push_back(static_cast<int>(r));
  return select_rows(data, keep);
}

Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw Error(ErrorKind::configuration, "subsample fraction must lie in (0, 1]");
  const auto n = static_cast<std::size_t>(data.size());
  const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return select_rows(data, order);
}

Dataset synth_classification(int n, int p, int classes, std::uint64_t seed, double separation) {
  if (n < 1 || p < 1 || classes < 1)
    throw Error(ErrorKind::configuration, "synthetic classification needs N, p, classes >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix means(classes, p);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < p; ++j) means(c, j) = gauss(rng);
    const double norm = means.row(c).norm();
    if (norm > 0.0) means.row(c) *= separation / norm;
  }
  Matrix X(n, p);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = i % classes;
    for (int j = 0; j < p; ++j) X(i, j) = means(labels[i], j) + gauss(rng);
  }
  return Dataset::classification(std::move(X), std::move(labels), classes);
}

Dataset synth_regression(int n, int p, std::uint64_t seed, double noise) {
  if (n < 1 || p < 1) throw Error(ErrorKind::configuration, "synthetic regression needs N, p >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector w(p);
  for (int j = 0; j < p; ++j) w(j) = gauss(rng) / std::sqrt(static_cast<double>(p));
  Matrix X(n, p);
  Matrix T(n, 1);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = gauss(rng);
    T(i, 0) = X.row(i).dot(w) + noise * gauss(rng);
  }
  return Dataset::regression(std::move(X), std::move(T));
}

std::pair<Dataset, Dataset> split_tail(const Dataset& data, int test_count) {
  if (test_count < 0 || test_count >= data.size())
    throw Error(ErrorKind::configuration, "test split must leave at least one training row");
  const int n_train = static_cast<int>(data.size()) - test_count;
  std::vector<int> head(n_train), tail(test_count);
  std::iota(head.begin(), head.end(), 0);
  std::iota(tail.begin(), tail.end(), n_train);
  Dataset test = select_rows(data, tail);
  std::vector<std::int64_t> ids(test_count);
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  return {select_rows(data, head), test.with_ids(std::move(ids))};
}

}  // namespace pbrf
