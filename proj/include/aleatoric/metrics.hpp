#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace aleatoric {

struct ScoredInstance {
  std::uint64_t id = 0;
  int label = 0;
  /// Predicted positive-class probability.
  double probability = 0.0;
  double aleatoric_variance = 0.0;
};

/// Mann-Whitney AUC from average ranks: (concordant + 0.5 * tied) / (pos * neg).
/// Throws MetricError unless both classes are present.
double auc(std::span<const ScoredInstance> instances);

struct RocPoint {
  double threshold;
  double false_positive_rate;
  double true_positive_rate;
};

/// One point per distinct score, descending thresholds, starting at (0, 0).
std::vector<RocPoint> roc_curve(std::span<const ScoredInstance> instances);

struct MeanStd {
  double mean = 0.0;
  /// Population standard deviation; 0 for a single value.
  double std = 0.0;
};

MeanStd mean_std(std::span<const double> values);

double median(std::vector<double> values);

}  // namespace aleatoric
