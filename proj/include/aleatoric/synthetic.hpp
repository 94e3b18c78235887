#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aleatoric/data.hpp"

namespace aleatoric {

inline constexpr const char* kGeneratorVersion = "synthetic-ehr/1";

/// How one schema feature is simulated. A latent AR(1) path z(t) with unit
/// stationary variance drives
///
///   value(t) = center + spread * (risk_shift * r + z(t)) + spread * noise * N(0, 1)
///
/// where r is the patient's latent risk. Observations arrive as a Poisson
/// process with `rate` events per hour, scaled by the patient's monitoring
/// intensity. Categorical features round the value (in level units) onto
/// `ordinal_levels`, which run from index 0 upward.
struct FeatureGenerator {
  std::string name;
  double center = 0.0;
  double spread = 1.0;
  double risk_shift = 0.0;
  double ar_coef = 0.8;
  double noise = 0.3;
  double rate = 0.5;
  double min_value = -1e300;
  double max_value = 1e300;
  std::vector<std::string> ordinal_levels;
};

struct GeneratorConfig {
  /// label ~ Bernoulli(sigmoid(label_slope * (rho * r + sqrt(1 - rho^2) * u) + intercept))
  /// with u ~ N(0, 1) unrecorded and rho = min(1, m)^outcome_coupling, m the
  /// patient's monitoring intensity. The mixed term is N(0, 1) whatever rho
  /// is, so the intercept is calibrated once for `positive_rate`.
  double label_slope = 2.0;
  double positive_rate = 2797.0 / 21139.0;
  /// Std of the per-patient log monitoring intensity (mean intensity 1).
  double intensity_spread = 1.0;
  /// Fraction of patients monitored sparsely; their intensity is further
  /// multiplied by `sparse_intensity`.
  double sparse_fraction = 0.0;
  double sparse_intensity = 0.3;
  /// 0 ties every outcome fully to the recorded risk. Larger values let the
  /// outcome of sparsely monitored patients drift from what was recorded.
  double outcome_coupling = 2.0;
  std::vector<FeatureGenerator> features;

  /// Generators for the 17 features of the reference schema.
  static GeneratorConfig reference();
};

void validate(const GeneratorConfig& config, const FeatureSchema& schema);

/// Intercept b with E[sigmoid(slope * Z + b)] = rate, Z ~ N(0, 1).
double calibrate_intercept(double slope, double rate);

struct SyntheticCorpus {
  std::vector<PatientRecord> records;
  /// r: drives the recorded features.
  std::vector<double> latent_risk;
  /// rho * r + sqrt(1 - rho^2) * u: drives the label.
  std::vector<double> outcome_latent;
};

/// Patients get ids 1..n; patient p draws from RngStream::derive(seed, "patient", p).
SyntheticCorpus generate_corpus(std::size_t n_patients, const FeatureSchema& schema, const GeneratorConfig& config,
                                std::uint64_t seed);

std::vector<PatientRecord> generate_synthetic(std::size_t n_patients, const FeatureSchema& schema,
                                              const GeneratorConfig& config, std::uint64_t seed);

}  // namespace aleatoric
