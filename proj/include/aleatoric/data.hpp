#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aleatoric/container.hpp"
#include "aleatoric/random.hpp"
#include "aleatoric/tensor.hpp"

namespace aleatoric {

inline constexpr std::size_t kObservationHours = 48;

enum class FeatureKind { Continuous, Categorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Continuous;
  /// Categorical only; one one-hot channel per level.
  std::vector<std::string> levels;
  /// Imputation default before the first observation. For categorical
  /// features this is a level index.
  double normal_value = 0.0;
  /// Standardization applied to continuous channels, fitted on training data.
  double mean = 0.0;
  double std = 1.0;

  std::size_t value_channels() const { return kind == FeatureKind::Continuous ? 1 : levels.size(); }
};

struct FeatureSchema {
  std::vector<FeatureSpec> features;
  bool normalized = false;

  std::size_t value_channels() const;
  std::size_t mask_channels() const { return features.size(); }
  std::size_t channels() const { return value_channels() + mask_channels(); }
  std::optional<std::size_t> find(const std::string& name) const;
  /// First value channel of feature f.
  std::size_t value_offset(std::size_t f) const;
};

/// Reads the schema file (JSON):
///   {"features": [{"name": ..., "kind": "continuous", "normal": 86.0},
///                 {"name": ..., "kind": "categorical", "levels": [...], "normal": "15"}, ...],
///    "normalization": {"<name>": {"mean": m, "std": s}, ...}}   // optional
FeatureSchema load_schema(const std::filesystem::path& path);
FeatureSchema schema_from_json(const std::string& text);
std::string schema_to_json(const FeatureSchema& schema);

/// The 17-feature reference schema that ships in data/reference_schema.json.
std::filesystem::path reference_schema_path();
FeatureSchema reference_schema();

struct Event {
  double hour = 0.0;
  std::size_t feature = 0;
  /// Measured value, or the level index for categorical features.
  double value = 0.0;
};

struct PatientRecord {
  std::uint64_t patient_id = 0;
  std::vector<Event> events;
  int label = 0;
};

/// Binned and imputed 48-hour matrix. values: [value_channels, 48];
/// masks: [features, 48] with 1 where a real observation fell in the bin.
struct FeatureMatrix {
  std::uint64_t patient_id = 0;
  Tensor values;
  Tensor masks;
  int label = 0;

  /// Value channels followed by mask channels: [channels, 48].
  Tensor network_input() const;
};

/// Hourly binning keeping the last observation per bin, forward fill between
/// observations, the schema's normal value before the first one, one-hot
/// categorical levels, and standardized continuous channels when the schema
/// carries fitted statistics.
FeatureMatrix bin_and_impute(const PatientRecord& record, const FeatureSchema& schema);

/// Mean and population std of every continuous feature over the observed
/// (mask = 1) bins of `records`. A zero std is replaced by 1.
FeatureSchema fit_normalization(const FeatureSchema& schema, const std::vector<PatientRecord>& records);

/// Keeps each event independently with probability `retention`. One uniform is
/// drawn per event in order, so the same rng seed gives nested subsets for
/// decreasing retention.
PatientRecord inject_missingness(const PatientRecord& record, double retention, RngStream& rng);

/// Per-patient stream for missingness injection under a shared seed.
RngStream injection_stream(std::uint64_t seed, std::uint64_t patient_id);

struct SplitFractions {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

/// Set sizes: floor(n * f) each, then the leftover records go one at a time to
/// the sets with the largest fractional parts (ties to the earlier set).
std::array<std::size_t, 3> split_sizes(std::size_t n, SplitFractions fractions);

struct Splits {
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> val;
  std::vector<PatientRecord> test;
};

/// Seeded shuffle then cut by split_sizes.
Splits split(const std::vector<PatientRecord>& records, SplitFractions fractions, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Raw file formats

/// Events file: optional '#'-prefixed provenance lines, then the header
/// `patient_id,hour,feature_name,value`, one event per row. Categorical values
/// are written as level names.
void write_events(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const FeatureSchema& schema, const std::vector<std::string>& provenance = {});
/// Labels file: optional '#' lines, header `patient_id,label`.
void write_labels(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const std::vector<std::string>& provenance = {});

/// Joins an events file and a labels file. Patients are returned in label-file
/// order; events keep file order.
std::vector<PatientRecord> read_records(const std::filesystem::path& events, const std::filesystem::path& labels,
                                        const FeatureSchema& schema);

/// Matrix cache in the tensor-table container ("values/<id>", "masks/<id>").
void save_matrix_cache(const std::filesystem::path& path, const std::vector<FeatureMatrix>& matrices,
                       const std::string& metadata = "{}");
std::vector<FeatureMatrix> load_matrix_cache(const std::filesystem::path& path);

}  // namespace aleatoric
