#include "aleatoric/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aleatoric/error.hpp"

namespace aleatoric {

double auc(std::span<const ScoredInstance> instances) {
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return instances[a].probability < instances[b].probability; });

  double positives = 0.0;
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && instances[order[j + 1]].probability == instances[order[i]].probability) ++j;
    // 1-based ranks i+1 .. j+1 share their mean.
    const double mean_rank = 0.5 * static_cast<double>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) {
      if (instances[order[k]].label == 1) {
        positives += 1.0;
        rank_sum += mean_rank;
      }
    }
    i = j + 1;
  }
  const double negatives = static_cast<double>(instances.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) {
    throw MetricError("auc: need at least one positive and one negative instance");
  }
  const double u = rank_sum - positives * (positives + 1.0) / 2.0;
  return u / (positives * negatives);
}

std::vector<RocPoint> roc_curve(std::span<const ScoredInstance> instances) {
  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return instances[a].probability > instances[b].probability; });
  double pos = 0.0, neg = 0.0;
  for (const auto& s : instances) (s.label == 1 ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) throw MetricError("roc_curve: need both classes");

  std::vector<RocPoint> points{{INFINITY, 0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = instances[order[i]].probability;
    while (i < order.size() && instances[order[i]].probability == threshold) {
      (instances[order[i]].label == 1 ? tp : fp) += 1.0;
      ++i;
    }
    points.push_back({threshold, fp / neg, tp / pos});
  }
  return points;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean_std: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

double median(std::vector<double> values) {
  if (values.empty()) throw MetricError("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace aleatoric
