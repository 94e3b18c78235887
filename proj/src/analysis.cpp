#include "aleatoric/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>
#include <unordered_map>

namespace aleatoric {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t k = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (k == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

LabeledSet make_labeled_set(const std::vector<PatientRecord>& records, const FeatureSchema& schema) {
  LabeledSet set;
  set.inputs.reserve(records.size());
  for (const auto& r : records) {
    const FeatureMatrix m = bin_and_impute(r, schema);
    set.inputs.push_back(m.network_input());
    set.labels.push_back(m.label);
    set.ids.push_back(m.patient_id);
  }
  return set;
}

std::vector<PatientRecord> degrade(const std::vector<PatientRecord>& records, double retention, std::uint64_t seed) {
  if (retention == 1.0) return records;
  std::vector<PatientRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    RngStream rng = injection_stream(seed, r.patient_id);
    out.push_back(inject_missingness(r, retention, rng));
  }
  return out;
}

ModelComparison compare_models(std::span<const Model> bayesian, std::span<const Model> benchmark,
                               const LabeledSet& test, const ScoringOptions& options) {
  ModelComparison c;
  c.bayesian_auc.resize(bayesian.size());
  c.benchmark_auc.resize(benchmark.size());
  parallel_for(bayesian.size() + benchmark.size(), options.threads, [&](std::size_t i) {
    if (i < bayesian.size()) {
      c.bayesian_auc[i] = auc(score(bayesian[i], test, options.mc_samples, options.eval_seed));
    } else {
      const std::size_t j = i - bayesian.size();
      c.benchmark_auc[j] = auc(score(benchmark[j], test, options.mc_samples, options.eval_seed));
    }
  });
  if (!c.bayesian_auc.empty()) c.bayesian = mean_std(c.bayesian_auc);
  if (!c.benchmark_auc.empty()) c.benchmark = mean_std(c.benchmark_auc);
  return c;
}

namespace {

std::vector<std::size_t> order_by(std::span<const ScoredInstance> xs, std::vector<std::size_t> idx,
                                  double ScoredInstance::*key) {
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (xs[a].*key != xs[b].*key) return xs[a].*key < xs[b].*key;
    return xs[a].id < xs[b].id;
  });
  return idx;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

Cohort make_cohort(std::span<const ScoredInstance> xs, std::span<const std::size_t> members, const char* name) {
  Cohort c;
  std::vector<ScoredInstance> subset;
  std::vector<double> unc;
  for (std::size_t i : members) {
    subset.push_back(xs[i]);
    c.ids.push_back(xs[i].id);
    unc.push_back(xs[i].aleatoric_variance);
    if (xs[i].label == 1) ++c.positives;
  }
  if (c.positives == 0 || c.positives == subset.size()) {
    throw MetricError(std::string("median split: ") + name + " half lacks one of the classes");
  }
  c.auc = auc(subset);
  c.median_uncertainty = median(unc);
  return c;
}

}  // namespace

MedianSplit median_split_analysis(std::span<const ScoredInstance> instances) {
  if (instances.size() < 2) throw MetricError("median split: need at least two instances");
  const auto order = order_by(instances, all_indices(instances.size()), &ScoredInstance::aleatoric_variance);
  const std::size_t half = instances.size() / 2;
  MedianSplit s;
  s.low = make_cohort(instances, std::span(order).first(half), "low");
  s.high = make_cohort(instances, std::span(order).subspan(half), "high");
  return s;
}

MedianSplitSummary summarize(const std::vector<MedianSplit>& per_model) {
  MedianSplitSummary s;
  s.per_model = per_model;
  std::vector<double> la, ha, lp, hp;
  for (const auto& m : per_model) {
    la.push_back(m.low.auc);
    ha.push_back(m.high.auc);
    lp.push_back(static_cast<double>(m.low.positives));
    hp.push_back(static_cast<double>(m.high.positives));
  }
  s.low_auc = mean_std(la);
  s.high_auc = mean_std(ha);
  s.low_positives = mean_std(lp);
  s.high_positives = mean_std(hp);
  return s;
}

std::uint64_t injection_seed(std::uint64_t seed, std::size_t model) {
  return RngStream::derive(seed, "inject-model", model).next_u64();
}

SweepResult retention_sweep(std::span<const Model> models, const std::vector<PatientRecord>& test_records,
                            const FeatureSchema& schema, std::span<const double> retentions, std::uint64_t seed,
                            const ScoringOptions& options) {
  if (models.empty()) throw DomainError("retention_sweep: no models");
  SweepResult result;
  result.rows.resize(retentions.size());
  for (std::size_t r = 0; r < retentions.size(); ++r) {
    result.rows[r].retention = retentions[r];
    result.rows[r].per_model.resize(models.size());
  }
  parallel_for(models.size(), options.threads, [&](std::size_t m) {
    const std::uint64_t inject = injection_seed(seed, m);
    for (std::size_t r = 0; r < retentions.size(); ++r) {
      const LabeledSet set = make_labeled_set(degrade(test_records, retentions[r], inject), schema);
      const auto scored = score(models[m], set, options.mc_samples, options.eval_seed);
      std::vector<double> unc;
      for (const auto& s : scored) unc.push_back(s.aleatoric_variance);
      SweepCell& cell = result.rows[r].per_model[m];
      cell.median_uncertainty = median(unc);
      cell.mean_uncertainty = std::accumulate(unc.begin(), unc.end(), 0.0) / static_cast<double>(unc.size());
      cell.auc = auc(scored);
    }
  });
  for (auto& row : result.rows) {
    std::vector<double> med, a;
    for (const auto& c : row.per_model) {
      med.push_back(c.median_uncertainty);
      a.push_back(c.auc);
    }
    row.median_uncertainty = mean_std(med);
    row.auc = mean_std(a);
  }
  return result;
}

std::vector<std::size_t> equal_parts(std::size_t n, std::size_t k) {
  std::vector<std::size_t> sizes(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++sizes[i];
  return sizes;
}

std::vector<std::size_t> quartile_cells(std::span<const ScoredInstance> instances) {
  std::vector<std::size_t> cell(instances.size(), 0);
  const auto by_unc = order_by(instances, all_indices(instances.size()), &ScoredInstance::aleatoric_variance);
  std::size_t pos = 0;
  const auto outer = equal_parts(instances.size(), 4);
  for (std::size_t uq = 0; uq < 4; ++uq) {
    std::vector<std::size_t> group(by_unc.begin() + static_cast<std::ptrdiff_t>(pos),
                                   by_unc.begin() + static_cast<std::ptrdiff_t>(pos + outer[uq]));
    pos += outer[uq];
    const auto by_prob = order_by(instances, std::move(group), &ScoredInstance::probability);
    const auto inner = equal_parts(by_prob.size(), 4);
    std::size_t ipos = 0;
    for (std::size_t pq = 0; pq < 4; ++pq) {
      for (std::size_t k = 0; k < inner[pq]; ++k) cell[by_prob[ipos + k]] = 4 * uq + pq;
      ipos += inner[pq];
    }
  }
  return cell;
}

GridResult quartile_grid_analysis(std::span<const Model> models, const std::vector<PatientRecord>& test_records,
                                  const FeatureSchema& schema, double baseline_retention, double rescore_retention,
                                  std::uint64_t seed, const ScoringOptions& options) {
  if (models.empty()) throw DomainError("quartile_grid_analysis: no models");
  GridResult g;
  g.baseline_retention = baseline_retention;
  g.rescore_retention = rescore_retention;
  g.baseline_auc.resize(models.size());
  for (std::size_t c = 0; c < 16; ++c) {
    g.cells[c].uncertainty_quartile = c / 4;
    g.cells[c].probability_quartile = c % 4;
    g.cells[c].sizes.assign(models.size(), 0);
    g.cells[c].delta.assign(models.size(), std::nullopt);
  }

  parallel_for(models.size(), options.threads, [&](std::size_t m) {
    const std::uint64_t inject = injection_seed(seed, m);
    const LabeledSet base_set = make_labeled_set(degrade(test_records, baseline_retention, inject), schema);
    const LabeledSet full_set = make_labeled_set(degrade(test_records, rescore_retention, inject), schema);
    const auto base = score(models[m], base_set, options.mc_samples, options.eval_seed);
    const auto full = score(models[m], full_set, options.mc_samples, options.eval_seed);
    const double base_auc = auc(base);
    g.baseline_auc[m] = base_auc;
    const auto cell = quartile_cells(base);
    for (std::size_t c = 0; c < 16; ++c) {
      std::vector<ScoredInstance> mixed = base;
      std::size_t size = 0;
      for (std::size_t i = 0; i < mixed.size(); ++i) {
        if (cell[i] == c) {
          mixed[i] = full[i];
          ++size;
        }
      }
      g.cells[c].sizes[m] = size;
      if (size > 0) g.cells[c].delta[m] = auc(mixed) - base_auc;
    }
  });

  for (auto& cell : g.cells) {
    std::vector<double> d;
    for (const auto& v : cell.delta) {
      if (v) d.push_back(*v);
    }
    if (!d.empty()) cell.delta_summary = mean_std(d);
  }
  return g;
}

}  // namespace aleatoric
