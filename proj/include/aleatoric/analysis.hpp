#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aleatoric/data.hpp"
#include "aleatoric/metrics.hpp"
#include "aleatoric/training.hpp"

namespace aleatoric {

/// Runs fn(0) .. fn(n - 1) on up to `threads` threads. Each index is handled
/// exactly once; the first exception is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Bins every record with `schema` into network inputs.
LabeledSet make_labeled_set(const std::vector<PatientRecord>& records, const FeatureSchema& schema);

/// Records with missingness injected at `retention`, patient p drawing from
/// injection_stream(seed, p). Retention 1 returns the records unchanged.
std::vector<PatientRecord> degrade(const std::vector<PatientRecord>& records, double retention, std::uint64_t seed);

/// Scoring options shared by the analyses.
struct ScoringOptions {
  std::size_t mc_samples = 100;
  std::uint64_t eval_seed = 0x5EED;
  std::size_t threads = 1;
};

// ---------------------------------------------------------------------------
// Model comparison

struct ModelComparison {
  std::vector<double> bayesian_auc;
  std::vector<double> benchmark_auc;
  MeanStd bayesian;
  MeanStd benchmark;
};

ModelComparison compare_models(std::span<const Model> bayesian, std::span<const Model> benchmark,
                               const LabeledSet& test, const ScoringOptions& options);

// ---------------------------------------------------------------------------
// Median-uncertainty split

struct Cohort {
  std::vector<std::uint64_t> ids;
  std::size_t positives = 0;
  double auc = 0.0;
  double median_uncertainty = 0.0;
};

struct MedianSplit {
  Cohort low;
  Cohort high;
};

/// Orders instances by (variance, id); the first floor(n / 2) form the low
/// half. Throws MetricError naming the half that lacks a class.
MedianSplit median_split_analysis(std::span<const ScoredInstance> instances);

struct MedianSplitSummary {
  std::vector<MedianSplit> per_model;
  MeanStd low_auc, high_auc, low_positives, high_positives;
};

MedianSplitSummary summarize(const std::vector<MedianSplit>& per_model);

// ---------------------------------------------------------------------------
// Retention sweep

struct SweepCell {
  double median_uncertainty = 0.0;
  double mean_uncertainty = 0.0;
  double auc = 0.0;
};

struct SweepRow {
  double retention = 1.0;
  std::vector<SweepCell> per_model;
  MeanStd median_uncertainty;  // across models
  MeanStd auc;                 // across models
};

struct SweepResult {
  std::vector<SweepRow> rows;
};

/// Injection seed of model m: RngStream::derive(seed, "inject-model", m). The
/// same seed serves every retention of that model, so each model sees nested
/// subsets as retention drops.
std::uint64_t injection_seed(std::uint64_t seed, std::size_t model);

SweepResult retention_sweep(std::span<const Model> models, const std::vector<PatientRecord>& test_records,
                            const FeatureSchema& schema, std::span<const double> retentions, std::uint64_t seed,
                            const ScoringOptions& options);

// ---------------------------------------------------------------------------
// Uncertainty x probability quartile grid

/// Sizes of k near-equal consecutive parts of n (the first n % k get one more).
std::vector<std::size_t> equal_parts(std::size_t n, std::size_t k);

/// cell[i] in [0, 16): 4 * uncertainty quartile + probability quartile.
/// Uncertainty quartiles order by (variance, id); inside each, probability
/// quartiles order by (probability, id).
std::vector<std::size_t> quartile_cells(std::span<const ScoredInstance> instances);

struct GridCell {
  std::size_t uncertainty_quartile = 0;  // 0..3
  std::size_t probability_quartile = 0;  // 0..3
  std::vector<std::size_t> sizes;        // per model
  std::vector<std::optional<double>> delta;  // per model; empty when undefined
  std::optional<MeanStd> delta_summary;
};

struct GridResult {
  double baseline_retention = 0.5;
  double rescore_retention = 1.0;
  std::vector<double> baseline_auc;  // per model
  std::array<GridCell, 16> cells;
};

/// Scores everyone at the baseline retention, fixes the 16 cells from those
/// scores, then for each cell swaps in that cell's scores at the rescoring
/// retention and records AUC(new) - AUC(baseline).
GridResult quartile_grid_analysis(std::span<const Model> models, const std::vector<PatientRecord>& test_records,
                                  const FeatureSchema& schema, double baseline_retention, double rescore_retention,
                                  std::uint64_t seed, const ScoringOptions& options);

}  // namespace aleatoric
