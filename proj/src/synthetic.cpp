#include "aleatoric/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "aleatoric/quadrature.hpp"

namespace aleatoric {

namespace {

FeatureGenerator continuous(std::string name, double center, double spread, double shift, double rate, double lo,
                            double hi) {
  FeatureGenerator g;
  g.name = std::move(name);
  g.center = center;
  g.spread = spread;
  g.risk_shift = shift;
  g.rate = rate;
  g.min_value = lo;
  g.max_value = hi;
  return g;
}

FeatureGenerator ordinal(std::string name, std::vector<std::string> levels, double center, double spread,
                         double shift, double rate) {
  FeatureGenerator g;
  g.name = std::move(name);
  g.ordinal_levels = std::move(levels);
  g.center = center;
  g.spread = spread;
  g.risk_shift = shift;
  g.rate = rate;
  return g;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t poisson(double mean, RngStream& rng) {
  // Knuth; means here are small (a few events per hour).
  const double limit = std::exp(-mean);
  std::size_t k = 0;
  double p = rng.uniform();
  while (p > limit) {
    ++k;
    p *= rng.uniform();
  }
  return k;
}

}  // namespace

GeneratorConfig GeneratorConfig::reference() {
  GeneratorConfig c;
  auto& f = c.features;
  f.push_back(ordinal("Capillary refill rate", {"0.0", "1.0"}, 0.0, 0.45, 0.5, 0.1));
  f.push_back(continuous("Diastolic blood pressure", 59.0, 12.0, -0.35, 2.2, 10.0, 150.0));
  f.push_back(continuous("Fraction inspired oxygen", 0.25, 0.15, 0.5, 0.2, 0.21, 1.0));
  f.push_back(ordinal("Glascow coma scale eye opening",
                      {"1 No Response", "2 To pain", "3 To speech", "4 Spontaneously"}, 3.0, 0.8, -0.6, 0.5));
  f.push_back(ordinal("Glascow coma scale motor response",
                      {"1 No Response", "2 Abnorm extensn", "3 Abnorm flexion", "4 Flex-withdraws",
                       "5 Localizes Pain", "6 Obeys Commands"},
                      5.0, 1.2, -0.6, 0.5));
  f.push_back(ordinal("Glascow coma scale total",
                      {"3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15"}, 11.5, 2.5, -0.6, 0.5));
  f.push_back(ordinal("Glascow coma scale verbal response",
                      {"1 No Response", "2 Incomp sounds", "3 Inapprop words", "4 Confused", "5 Oriented"}, 3.8,
                      1.3, -0.6, 0.5));
  f.push_back(continuous("Glucose", 128.0, 40.0, 0.3, 0.3, 20.0, 800.0));
  f.push_back(continuous("Heart Rate", 86.0, 15.0, 0.5, 2.5, 20.0, 250.0));
  f.push_back(continuous("Height", 170.0, 10.0, 0.0, 0.005, 120.0, 220.0));
  f.push_back(continuous("Mean blood pressure", 77.0, 13.0, -0.4, 2.2, 20.0, 200.0));
  f.push_back(continuous("Oxygen saturation", 98.0, 2.0, -0.45, 2.4, 50.0, 100.0));
  f.push_back(continuous("Respiratory rate", 19.0, 5.0, 0.5, 2.4, 2.0, 70.0));
  f.push_back(continuous("Systolic blood pressure", 118.0, 18.0, -0.4, 2.2, 40.0, 260.0));
  f.push_back(continuous("Temperature", 36.6, 0.6, 0.2, 0.5, 30.0, 43.0));
  f.push_back(continuous("Weight", 81.0, 18.0, 0.0, 0.03, 30.0, 250.0));
  f.push_back(continuous("pH", 7.4, 0.07, -0.5, 0.15, 6.6, 7.8));
  return c;
}

void validate(const GeneratorConfig& config, const FeatureSchema& schema) {
  if (!(config.positive_rate > 0.0 && config.positive_rate < 1.0)) {
    throw DomainError("generator: positive_rate must lie in (0, 1)");
  }
  if (!std::isfinite(config.label_slope) || !(config.intensity_spread >= 0.0) ||
      !(config.outcome_coupling >= 0.0) ||
      !(config.sparse_fraction >= 0.0 && config.sparse_fraction <= 1.0) || !(config.sparse_intensity > 0.0)) {
    throw DomainError("generator: invalid label_slope, intensity or coupling settings");
  }
  for (const auto& g : config.features) {
    const auto f = schema.find(g.name);
    if (!f) throw DomainError("generator: feature '" + g.name + "' is not in the schema");
    const auto& spec = schema.features[*f];
    if (!(g.spread > 0.0) || !(g.rate >= 0.0) || !(g.noise >= 0.0) || !(std::abs(g.ar_coef) < 1.0)) {
      throw DomainError("generator: invalid parameters for '" + g.name + "'");
    }
    if ((spec.kind == FeatureKind::Categorical) != !g.ordinal_levels.empty()) {
      throw DomainError("generator: '" + g.name + "' kind disagrees with the schema");
    }
    for (const auto& level : g.ordinal_levels) {
      if (std::find(spec.levels.begin(), spec.levels.end(), level) == spec.levels.end()) {
        throw DomainError("generator: level '" + level + "' of '" + g.name + "' is not in the schema");
      }
    }
  }
}

double calibrate_intercept(double slope, double rate) {
  const QuadratureRule rule = gauss_hermite(64);
  auto mean_rate = [&](double b) { return expect_standard_normal([&](double z) { return sigmoid(slope * z + b); }, rule); };
  double lo = -50.0, hi = 50.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_rate(mid) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SyntheticCorpus generate_corpus(std::size_t n_patients, const FeatureSchema& schema, const GeneratorConfig& config,
                                std::uint64_t seed) {
  if (n_patients == 0) throw DomainError("generate_synthetic: need at least one patient");
  validate(config, schema);
  const double intercept = calibrate_intercept(config.label_slope, config.positive_rate);

  struct Resolved {
    std::size_t feature;
    const FeatureGenerator* gen;
    std::vector<double> level_index;  // ordinal position -> schema level index
  };
  std::vector<Resolved> resolved;
  for (const auto& g : config.features) {
    Resolved r{*schema.find(g.name), &g, {}};
    const auto& levels = schema.features[r.feature].levels;
    for (const auto& level : g.ordinal_levels) {
      r.level_index.push_back(static_cast<double>(std::find(levels.begin(), levels.end(), level) - levels.begin()));
    }
    resolved.push_back(std::move(r));
  }

  SyntheticCorpus corpus;
  corpus.records.reserve(n_patients);
  corpus.latent_risk.reserve(n_patients);
  corpus.outcome_latent.reserve(n_patients);
  for (std::size_t p = 0; p < n_patients; ++p) {
    RngStream rng = RngStream::derive(seed, "patient", p);
    const double risk = rng.normal();
    PatientRecord rec;
    rec.patient_id = p + 1;
    const double s = config.intensity_spread;
    double intensity = std::exp(s * rng.normal() - 0.5 * s * s);
    if (rng.uniform() < config.sparse_fraction) intensity *= config.sparse_intensity;
    const double rho = std::pow(std::min(1.0, intensity), config.outcome_coupling);
    const double mixed = rho * risk + std::sqrt(1.0 - rho * rho) * rng.normal();
    rec.label = rng.uniform() < sigmoid(config.label_slope * mixed + intercept) ? 1 : 0;

    for (const auto& r : resolved) {
      const FeatureGenerator& g = *r.gen;
      const double innovation = std::sqrt(1.0 - g.ar_coef * g.ar_coef);
      double z = rng.normal();
      std::vector<double> times;
      for (std::size_t hour = 0; hour < kObservationHours; ++hour) {
        if (hour > 0) z = g.ar_coef * z + innovation * rng.normal();
        const std::size_t count = poisson(g.rate * intensity, rng);
        times.clear();
        for (std::size_t k = 0; k < count; ++k) times.push_back(static_cast<double>(hour) + rng.uniform());
        std::sort(times.begin(), times.end());
        for (double t : times) {
          double v = g.center + g.spread * (g.risk_shift * risk + z + g.noise * rng.normal());
          Event e{t, r.feature, 0.0};
          if (r.level_index.empty()) {
            e.value = std::clamp(v, g.min_value, g.max_value);
          } else {
            const auto top = static_cast<double>(r.level_index.size() - 1);
            e.value = r.level_index[static_cast<std::size_t>(std::clamp(std::round(v), 0.0, top))];
          }
          rec.events.push_back(e);
        }
      }
    }
    std::stable_sort(rec.events.begin(), rec.events.end(),
                     [](const Event& a, const Event& b) { return a.hour < b.hour; });
    corpus.records.push_back(std::move(rec));
    corpus.latent_risk.push_back(risk);
    corpus.outcome_latent.push_back(mixed);
  }
  return corpus;
}

std::vector<PatientRecord> generate_synthetic(std::size_t n_patients, const FeatureSchema& schema,
                                              const GeneratorConfig& config, std::uint64_t seed) {
  return generate_corpus(n_patients, schema, config, seed).records;
}

}  // namespace aleatoric
