#pragma once

#include <span>
#include <vector>

namespace pbrf {

/// Both throw an undefined-correlation error for fewer than 3 points,
/// mismatched lengths, non-finite values or a constant input.
double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> xs);

}  // namespace pbrf
