#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pbrf/loss.hpp"

namespace pbrf {

enum class Task { regression, classification };

/// Training or test data. Rows are examples; ids survive removal so results
/// can always be traced back to the original row.
class Dataset {
 public:
  Dataset() = default;

  static Dataset regression(Matrix inputs, Matrix targets);
  static Dataset classification(Matrix inputs, std::vector<int> labels, int num_classes);

  Task task() const { return task_; }
  Eigen::Index size() const { return inputs_.rows(); }
  bool empty() const { return size() == 0; }
  Eigen::Index input_dim() const { return inputs_.cols(); }
  int num_classes() const { return num_classes_; }

  const Matrix& inputs() const { return inputs_; }
  const Matrix& targets() const { return targets_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<std::int64_t>& ids() const { return ids_; }

  /// Row index of `id`; throws a lookup error when absent.
  Eigen::Index row_of(std::int64_t id) const;
  bool contains(std::int64_t id) const;

  /// Column batch (p x B) of the selected rows.
  Matrix batch_inputs(std::span<const int> rows) const;
  /// Targets for `rows`, encoded for `loss`.
  TargetBatch batch_targets(std::span<const int> rows, LossKind loss) const;

  Matrix all_inputs_columns() const { return inputs_.transpose(); }
  TargetBatch all_targets(LossKind loss) const;
  std::vector<int> all_rows() const;

  /// Throws when the dataset cannot be used for a computation (N = 0).
  void require_nonempty() const;

  Dataset with_labels(std::vector<int> labels) const;
  Dataset with_ids(std::vector<std::int64_t> ids) const;

  bool operator==(const Dataset&) const;

 private:
  void validate();

  Task task_ = Task::regression;
  Matrix inputs_;
  Matrix targets_;
  std::vector<int> labels_;
  int num_classes_ = 0;
  std::vector<std::int64_t> ids_;
  std::map<std::int64_t, Eigen::Index> index_;
};

struct CsvSchema {
  std::vector<std::string> feature_columns;  // empty = every non-target column
  std::vector<std::string> target_columns;
  Task task = Task::regression;
  int num_classes = 0;  // classification only; 0 = infer from max label + 1
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);

struct Normalization {
  Vector input_mean, input_scale;
  Vector target_mean, target_scale;  // regression only
};

/// Zero mean, unit population variance per feature (and per regression
/// target). Constant columns map to 0.
std::pair<Dataset, Normalization> normalize(const Dataset& data);

/// Applies previously fitted normalization (for test splits).
Dataset apply_normalization(const Dataset& data, const Normalization& norm);

struct CorruptionRecord {
  std::vector<std::int64_t> corrupted_ids;        // sorted
  std::map<std::int64_t, int> original_labels;
  std::uint64_t seed = 0;
};

std::pair<Dataset, CorruptionRecord> corrupt_labels(const Dataset& data, double fraction,
                                                    std::uint64_t seed);

Dataset restore_labels(const Dataset& data, const CorruptionRecord& record);

Dataset remove_examples(const Dataset& data, std::span<const std::int64_t> ids);

/// Seeded uniform subsample without replacement, row order preserved.
Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed);

/// Class-conditional isotropic Gaussians around random means of norm
/// `separation`.
Dataset synth_classification(int n, int p, int classes, std::uint64_t seed,
                             double separation = 3.0);

/// y = w . x + noise, x ~ N(0, I), w ~ N(0, I / p).
Dataset synth_regression(int n, int p, std::uint64_t seed, double noise = 0.1);

/// Splits off the trailing `test_count` rows. Training rows keep their ids;
/// test rows are renumbered from 0.
std::pair<Dataset, Dataset> split_tail(const Dataset& data, int test_count);

}  // namespace pbrf
