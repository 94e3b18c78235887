#include "aleatoric/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "aleatoric/analysis.hpp"
#include "aleatoric/synthetic.hpp"

namespace aleatoric::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct KeySpec {
  const char* key;
  json value;
  const char* help;
};

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = [] {
    const RunConfig d;
    return std::vector<KeySpec>{
        {"seed", d.seed, "root seed; every random stream derives from it"},
        {"schema", d.schema, "feature schema file (empty: bundled reference schema)"},
        {"data_dir", d.data_dir.string(), "where events.csv / labels.csv live"},
        {"out_dir", d.out_dir.string(), "checkpoints, logs and reports go here"},
        {"threads", d.threads, "worker threads (0: all cores); never changes results"},
        {"patients", d.patients, "gen: corpus size"},
        {"positive_rate", d.positive_rate, "gen: target positive rate"},
        {"matrix_cache", d.matrix_cache, "gen: also write binned matrices to matrices.bin"},
        {"split", d.split, "train/val/test fractions"},
        {"ensemble", d.ensemble, "members per variant"},
        {"variant", d.variant, "bayesian | benchmark | both"},
        {"epochs", d.epochs, "max epochs"},
        {"patience", d.patience, "epochs without val AUC gain before stopping"},
        {"batch_size", d.batch_size, "mini-batch size"},
        {"learning_rate", d.learning_rate, "Adam step size"},
        {"mc_samples", d.mc_samples, "MC draws per instance in the training loss"},
        {"eval_mc_samples", d.eval_mc_samples, "MC draws per instance when scoring"},
        {"w_bayes", d.w_bayes, "weight of the Bayesian cross-entropy"},
        {"w_ce", d.w_ce, "weight of the plain cross-entropy"},
        {"class_weighting", d.class_weighting, "inverse-frequency class weights in the loss"},
        {"filters", d.filters, "filters per conv layer"},
        {"kernel_width", d.kernel_width, "conv kernel width (odd)"},
        {"keep_prob", d.keep_prob, "dropout keep probability"},
        {"per_class_sigma", d.per_class_sigma, "one noise scale per class instead of one shared"},
        {"retentions", d.retentions, "noise-sweep: retention fractions"},
        {"grid_baseline", d.grid_baseline, "grid-report: baseline retention"},
        {"grid_rescore", d.grid_rescore, "grid-report: retention used when rescoring a cell"},
    };
  }();
  return table;
}

template <typename T>
T get(const json& j, const char* key) {
  return j.at(key).get<T>();
}

bool same_kind(const json& value, const json& reference) {
  if (reference.is_boolean()) return value.is_boolean();
  if (reference.is_number_unsigned() || reference.is_number_integer()) {
    return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  }
  if (reference.is_number()) return value.is_number();
  if (reference.is_string()) return value.is_string();
  if (reference.is_array()) {
    return value.is_array() && std::all_of(value.begin(), value.end(), [](const json& x) { return x.is_number(); });
  }
  return false;
}

// Flag text -> JSON of the reference's type.
json parse_flag(const std::string& key, const std::string& text, const json& reference) {
  json v;
  if (reference.is_string()) {
    v = text;
  } else if (reference.is_array()) {
    try {
      v = json::parse(text);
    } catch (const json::exception&) {
      v = json::array();
      std::stringstream ss(text);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          v.push_back(json::parse(item));
        } catch (const json::exception&) {
          throw ConfigError("--" + key + ": '" + text + "' is not a list of numbers");
        }
      }
    }
    if (v.is_number()) v = json::array({v});  // "--retentions 1.0"
  } else {
    try {
      v = json::parse(text);
    } catch (const json::exception&) {
      throw ConfigError("--" + key + ": cannot parse '" + text + "'");
    }
  }
  if (!same_kind(v, reference)) throw ConfigError("--" + key + ": '" + text + "' has the wrong type");
  return v;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::size_t worker_count(const RunConfig& c) {
  if (c.threads > 0) return c.threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: '" + path.string() + "'");
}

std::string fixed(double x, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

std::string pm(const MeanStd& m, int digits = 4) { return fixed(m.mean, digits) + " ± " + fixed(m.std, digits); }

json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

// Loaded checkpoints of one variant, in member order.
std::vector<Checkpoint> load_members(const RunConfig& c, Variant v) {
  std::vector<Checkpoint> out;
  for (std::size_t m = 0; m < c.ensemble; ++m) {
    const fs::path p = checkpoint_path(c, v, m);
    if (!fs::exists(p)) {
      throw IoError("missing checkpoint '" + p.string() + "' (" + to_string(v) + " member " + std::to_string(m) +
                    "); run `train` with the same config first");
    }
    out.push_back(Checkpoint::load(p));
  }
  return out;
}

FeatureSchema fitted_schema(const Checkpoint& ck) {
  const json extra = json::parse(ck.extra);
  if (!extra.contains("schema")) throw SchemaError("checkpoint carries no fitted schema");
  return schema_from_json(extra.at("schema").dump());
}

Splits load_splits(const RunConfig& c, const FeatureSchema& schema) {
  const auto records = read_records(events_path(c), labels_path(c), schema);
  return split(records, split_fractions(c), stream_seed(c, "split"));
}

std::vector<Model> models_of(const std::vector<Checkpoint>& cks) {
  std::vector<Model> out;
  for (const auto& ck : cks) out.push_back(ck.model());
  return out;
}

ScoringOptions scoring(const RunConfig& c) {
  return {c.eval_mc_samples, stream_seed(c, "eval"), worker_count(c)};
}

// Bayesian checkpoints plus the test records they are evaluated on.
struct BayesianRun {
  std::vector<Model> models;
  FeatureSchema schema;
  std::vector<PatientRecord> test;
};

BayesianRun load_bayesian(const RunConfig& c, const char* command) {
  const auto vs = variants(c);
  if (std::find(vs.begin(), vs.end(), Variant::Bayesian) == vs.end()) {
    throw ConfigError(std::string(command) + " needs the bayesian variant (variant is '" + c.variant + "')");
  }
  const auto cks = load_members(c, Variant::Bayesian);
  BayesianRun r;
  r.models = models_of(cks);
  r.schema = fitted_schema(cks.front());
  r.test = load_splits(c, r.schema).test;
  return r;
}

const char* help_footer() {
  static const std::string text = [] {
    std::ostringstream os;
    os << "Config keys (JSON file via --config, or --<key> with '_' written as '-'; flags win):\n";
    for (const auto& k : key_table()) {
      os << "  " << std::left << std::setw(16) << k.key << " default " << std::setw(26) << k.value.dump() << ' '
         << k.help << '\n';
    }
    os << "Exit codes: 0 ok, 1 usage/config, 2 data, 3 training, 4 evaluation.";
    return os.str();
  }();
  return text.c_str();
}

}  // namespace

json defaults() {
  json j = json::object();
  for (const auto& k : key_table()) j[k.key] = k.value;
  return j;
}

const std::vector<std::pair<std::string, std::string>>& key_help() {
  static const auto list = [] {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& k : key_table()) out.emplace_back(k.key, k.help);
    return out;
  }();
  return list;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"schema", c.schema},
          {"data_dir", c.data_dir.string()},
          {"out_dir", c.out_dir.string()},
          {"threads", c.threads},
          {"patients", c.patients},
          {"positive_rate", c.positive_rate},
          {"matrix_cache", c.matrix_cache},
          {"split", c.split},
          {"ensemble", c.ensemble},
          {"variant", c.variant},
          {"epochs", c.epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"mc_samples", c.mc_samples},
          {"eval_mc_samples", c.eval_mc_samples},
          {"w_bayes", c.w_bayes},
          {"w_ce", c.w_ce},
          {"class_weighting", c.class_weighting},
          {"filters", c.filters},
          {"kernel_width", c.kernel_width},
          {"keep_prob", c.keep_prob},
          {"per_class_sigma", c.per_class_sigma},
          {"retentions", c.retentions},
          {"grid_baseline", c.grid_baseline},
          {"grid_rescore", c.grid_rescore}};
}

RunConfig config_from_json(const json& overrides) {
  if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
  json j = defaults();
  for (const auto& [key, value] : overrides.items()) {
    if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    if (!same_kind(value, j[key])) throw ConfigError("config key '" + key + "' has the wrong type");
    j[key] = value;
  }
  RunConfig c;
  c.seed = get<std::uint64_t>(j, "seed");
  c.schema = get<std::string>(j, "schema");
  c.data_dir = get<std::string>(j, "data_dir");
  c.out_dir = get<std::string>(j, "out_dir");
  c.threads = get<std::size_t>(j, "threads");
  c.patients = get<std::size_t>(j, "patients");
  c.positive_rate = get<double>(j, "positive_rate");
  c.matrix_cache = get<bool>(j, "matrix_cache");
  c.split = get<std::vector<double>>(j, "split");
  c.ensemble = get<std::size_t>(j, "ensemble");
  c.variant = get<std::string>(j, "variant");
  c.epochs = get<std::size_t>(j, "epochs");
  c.patience = get<std::size_t>(j, "patience");
  c.batch_size = get<std::size_t>(j, "batch_size");
  c.learning_rate = get<double>(j, "learning_rate");
  c.mc_samples = get<std::size_t>(j, "mc_samples");
  c.eval_mc_samples = get<std::size_t>(j, "eval_mc_samples");
  c.w_bayes = get<double>(j, "w_bayes");
  c.w_ce = get<double>(j, "w_ce");
  c.class_weighting = get<bool>(j, "class_weighting");
  c.filters = get<std::size_t>(j, "filters");
  c.kernel_width = get<std::size_t>(j, "kernel_width");
  c.keep_prob = get<double>(j, "keep_prob");
  c.per_class_sigma = get<bool>(j, "per_class_sigma");
  c.retentions = get<std::vector<double>>(j, "retentions");
  c.grid_baseline = get<double>(j, "grid_baseline");
  c.grid_rescore = get<double>(j, "grid_rescore");

  if (c.split.size() != 3) throw ConfigError("split needs three fractions");
  if (c.ensemble == 0) throw ConfigError("ensemble must be at least 1");
  if (c.patients == 0) throw ConfigError("patients must be at least 1");
  if (!(c.positive_rate > 0.0 && c.positive_rate < 1.0)) throw ConfigError("positive_rate must lie in (0, 1)");
  variants(c);
  for (double r : c.retentions) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("retentions must lie in [0, 1]");
  }
  for (double r : {c.grid_baseline, c.grid_rescore}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("grid retentions must lie in [0, 1]");
  }
  if (std::abs(c.split[0] + c.split[1] + c.split[2] - 1.0) > 1e-9) throw ConfigError("split must sum to 1");
  try {
    validate(train_config(c));
    NetworkConfig net;
    net.filters = c.filters;
    net.kernel_width = c.kernel_width;
    net.keep_prob = c.keep_prob;
    net.per_class_sigma = c.per_class_sigma;
    validate(net);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

std::string config_hash(const RunConfig& c) {
  json j = to_json(c);
  j.erase("threads");
  return hex64(fnv1a(j.dump()));
}

FeatureSchema load_run_schema(const RunConfig& c) {
  return c.schema.empty() ? reference_schema() : load_schema(c.schema);
}

NetworkConfig network_config(const RunConfig& c, const FeatureSchema& schema) {
  NetworkConfig n;
  n.in_channels = schema.channels();
  n.time_steps = kObservationHours;
  n.filters = c.filters;
  n.kernel_width = c.kernel_width;
  n.keep_prob = c.keep_prob;
  n.per_class_sigma = c.per_class_sigma;
  return n;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.adam.learning_rate = c.learning_rate;
  t.batch_size = c.batch_size;
  t.max_epochs = c.epochs;
  t.patience = c.patience;
  t.mc_samples = c.mc_samples;
  t.eval_mc_samples = c.eval_mc_samples;
  t.loss_weights = {c.w_bayes, c.w_ce};
  t.class_weighting = c.class_weighting;
  t.seed = stream_seed(c, "train");
  t.eval_seed = stream_seed(c, "eval");
  return t;
}

SplitFractions split_fractions(const RunConfig& c) { return {c.split[0], c.split[1], c.split[2]}; }

std::uint64_t stream_seed(const RunConfig& c, const char* purpose) {
  return RngStream::derive(c.seed, purpose).next_u64();
}

std::vector<Variant> variants(const RunConfig& c) {
  if (c.variant == "both") return {Variant::Bayesian, Variant::Benchmark};
  try {
    return {variant_from_string(c.variant)};
  } catch (const Error&) {
    throw ConfigError("variant must be bayesian, benchmark or both (got '" + c.variant + "')");
  }
}

fs::path events_path(const RunConfig& c) { return c.data_dir / "events.csv"; }
fs::path labels_path(const RunConfig& c) { return c.data_dir / "labels.csv"; }
fs::path checkpoint_path(const RunConfig& c, Variant v, std::size_t m) {
  return c.out_dir / "checkpoints" / (to_string(v) + "-" + std::to_string(m) + ".ckpt");
}
fs::path reports_dir(const RunConfig& c) { return c.out_dir / "reports"; }

// ---------------------------------------------------------------------------

void cmd_gen(const RunConfig& c, std::ostream& log) {
  const FeatureSchema schema = load_run_schema(c);
  GeneratorConfig g = GeneratorConfig::reference();
  g.positive_rate = c.positive_rate;
  const auto records = generate_synthetic(c.patients, schema, g, stream_seed(c, "generate"));
  std::size_t positives = 0;
  for (const auto& r : records) positives += static_cast<std::size_t>(r.label);
  const double rate = static_cast<double>(positives) / static_cast<double>(records.size());

  const std::string hash = config_hash(c);
  const std::vector<std::string> provenance{
      "generator " + std::string(kGeneratorVersion),
      "seed " + std::to_string(c.seed),
      "patients " + std::to_string(records.size()),
      "positive_rate " + fixed(rate, 6) + " (target " + fixed(c.positive_rate, 6) + ")",
      "config_hash " + hash,
  };
  ensure_dir(c.data_dir);
  write_events(events_path(c), records, schema, provenance);
  write_labels(labels_path(c), records, provenance);
  if (c.matrix_cache) {
    std::vector<FeatureMatrix> matrices;
    matrices.reserve(records.size());
    for (const auto& r : records) matrices.push_back(bin_and_impute(r, schema));
    const json meta{{"config_hash", hash}, {"generator", kGeneratorVersion}, {"seed", c.seed}};
    save_matrix_cache(c.data_dir / "matrices.bin", matrices, meta.dump());
  }
  log << "gen: " << records.size() << " patients, " << positives << " positive (" << fixed(rate, 4) << ") -> "
      << c.data_dir.string() << '\n';
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  const FeatureSchema raw = load_run_schema(c);
  const Splits s = load_splits(c, raw);
  if (s.train.empty() || s.val.empty()) throw DataError("train: empty training or validation split");
  const FeatureSchema schema = fit_normalization(raw, s.train);
  const LabeledSet train_set = make_labeled_set(s.train, schema);
  const LabeledSet val_set = make_labeled_set(s.val, schema);
  const NetworkConfig net = network_config(c, schema);
  const TrainConfig tc = train_config(c);
  const std::string hash = config_hash(c);
  const json extra{{"config_hash", hash}, {"schema", json::parse(schema_to_json(schema))}};

  // Train everything first so a failure leaves no checkpoint behind.
  std::vector<std::pair<Variant, std::vector<TrainResult>>> all;
  for (Variant v : variants(c)) {
    log << "train: " << to_string(v) << " x" << c.ensemble << " on " << train_set.size() << " patients\n";
    all.emplace_back(v, train_ensemble(train_set, val_set, net, tc, v, c.ensemble, worker_count(c)));
  }
  for (auto& [v, results] : all) {
    for (std::size_t m = 0; m < results.size(); ++m) {
      Checkpoint ck = results[m].best;
      ck.extra = extra.dump();
      const fs::path path = checkpoint_path(c, v, m);
      ensure_dir(path.parent_path());
      ck.save(path);
      auto out = open_out(c.out_dir / "logs" / (to_string(v) + "-" + std::to_string(m) + ".jsonl"));
      for (const auto& e : results[m].curve) {
        out << json{{"config_hash", hash},   {"variant", to_string(v)},   {"member", m},
                    {"epoch", e.epoch},      {"train_loss", e.train_loss}, {"val_auc", e.val_auc}}
                   .dump()
            << '\n';
      }
      log << "  " << to_string(v) << "-" << m << ": best epoch " << ck.epoch << ", val AUC " << fixed(ck.val_auc)
          << '\n';
    }
  }
}

void cmd_eval(const RunConfig& c, std::ostream& log) {
  const auto vs = variants(c);
  std::map<Variant, std::vector<Checkpoint>> cks;
  for (Variant v : vs) cks[v] = load_members(c, v);
  const FeatureSchema schema = fitted_schema(cks.begin()->second.front());
  const LabeledSet test = make_labeled_set(load_splits(c, schema).test, schema);
  const ScoringOptions opt = scoring(c);
  const std::string hash = config_hash(c);

  const auto bayes = cks.count(Variant::Bayesian) ? models_of(cks[Variant::Bayesian]) : std::vector<Model>{};
  const auto bench = cks.count(Variant::Benchmark) ? models_of(cks[Variant::Benchmark]) : std::vector<Model>{};

  // Score once per model; AUC, ROC and the split all come from these.
  std::vector<std::vector<ScoredInstance>> scored(bayes.size() + bench.size());
  parallel_for(scored.size(), opt.threads, [&](std::size_t i) {
    const Model& m = i < bayes.size() ? bayes[i] : bench[i - bayes.size()];
    scored[i] = score(m, test, opt.mc_samples, opt.eval_seed);
  });

  json report{{"config_hash", hash}, {"test_patients", test.size()}};
  std::ostringstream table;
  table << "# config_hash " << hash << "\n";
  table << "Test AUC (" << test.size() << " patients)\n";
  const fs::path dir = reports_dir(c);
  for (Variant v : vs) {
    const std::size_t offset = v == Variant::Bayesian ? 0 : bayes.size();
    const std::size_t n = v == Variant::Bayesian ? bayes.size() : bench.size();
    std::vector<double> aucs;
    for (std::size_t m = 0; m < n; ++m) {
      const auto& s = scored[offset + m];
      aucs.push_back(auc(s));
      auto out = open_out(dir / ("roc-" + to_string(v) + "-" + std::to_string(m) + ".csv"));
      out << "# config_hash " << hash << "\nthreshold,fpr,tpr\n";
      for (const auto& p : roc_curve(s)) {
        out << (std::isinf(p.threshold) ? std::string(p.threshold > 0 ? "inf" : "-inf") : json(p.threshold).dump()) << ',' << json(p.false_positive_rate).dump() << ','
            << json(p.true_positive_rate).dump() << '\n';
      }
    }
    const MeanStd ms = mean_std(aucs);
    report["comparison"][to_string(v)] = {{"per_model", aucs}, {"mean", ms.mean}, {"std", ms.std}};
    table << "  " << std::left << std::setw(10) << to_string(v) << ' ' << pm(ms) << "  (" << n << " models)\n";
  }

  if (!bayes.empty()) {
    std::vector<MedianSplit> splits;
    for (std::size_t m = 0; m < bayes.size(); ++m) splits.push_back(median_split_analysis(scored[m]));
    const MedianSplitSummary sum = summarize(splits);
    json per = json::array();
    auto cohort = [](const Cohort& h) {
      return json{{"size", h.ids.size()},
                  {"positives", h.positives},
                  {"auc", h.auc},
                  {"median_uncertainty", h.median_uncertainty}};
    };
    for (const auto& s : splits) per.push_back({{"low", cohort(s.low)}, {"high", cohort(s.high)}});
    report["median_split"] = {{"per_model", per},
                              {"low_auc", to_json(sum.low_auc)},
                              {"high_auc", to_json(sum.high_auc)},
                              {"low_positives", to_json(sum.low_positives)},
                              {"high_positives", to_json(sum.high_positives)}};
    table << "\nMedian-uncertainty split (bayesian, mean ± std over models)\n";
    table << "  half  AUC               positives\n";
    table << "  low   " << pm(sum.low_auc) << "  " << pm(sum.low_positives, 1) << '\n';
    table << "  high  " << pm(sum.high_auc) << "  " << pm(sum.high_positives, 1) << '\n';
  }

  write_json(dir / "eval.json", report);
  auto out = open_out(dir / "eval.txt");
  out << table.str();
  log << table.str();
}

void cmd_noise_sweep(const RunConfig& c, std::ostream& log) {
  const BayesianRun r = load_bayesian(c, "noise-sweep");
  const ScoringOptions opt = scoring(c);
  const SweepResult sw = retention_sweep(r.models, r.test, r.schema, c.retentions, stream_seed(c, "inject"), opt);
  const std::string hash = config_hash(c);
  const fs::path dir = reports_dir(c);

  json rows = json::array();
  auto csv = open_out(dir / "sweep.csv");
  csv << "# config_hash " << hash << "\nretention,model,median_uncertainty,mean_uncertainty,auc\n";
  std::ostringstream table;
  table << "# config_hash " << hash << "\n";
  table << "retention  median uncertainty     AUC\n";
  for (const auto& row : sw.rows) {
    json per = json::array();
    for (std::size_t m = 0; m < row.per_model.size(); ++m) {
      const auto& cell = row.per_model[m];
      per.push_back({{"median_uncertainty", cell.median_uncertainty},
                     {"mean_uncertainty", cell.mean_uncertainty},
                     {"auc", cell.auc}});
      csv << json(row.retention).dump() << ',' << m << ',' << json(cell.median_uncertainty).dump() << ','
          << json(cell.mean_uncertainty).dump() << ',' << json(cell.auc).dump() << '\n';
    }
    rows.push_back({{"retention", row.retention},
                    {"per_model", per},
                    {"median_uncertainty", to_json(row.median_uncertainty)},
                    {"auc", to_json(row.auc)}});
    table << std::left << std::setw(9) << fixed(row.retention, 2) << "  " << std::setw(21)
          << pm(row.median_uncertainty) << "  " << pm(row.auc) << '\n';
  }
  write_json(dir / "sweep.json", {{"config_hash", hash}, {"models", r.models.size()}, {"rows", rows}});
  auto out = open_out(dir / "sweep.txt");
  out << table.str();
  log << table.str();
}

void cmd_grid_report(const RunConfig& c, std::ostream& log) {
  const BayesianRun r = load_bayesian(c, "grid-report");
  const ScoringOptions opt = scoring(c);
  const GridResult g =
      quartile_grid_analysis(r.models, r.test, r.schema, c.grid_baseline, c.grid_rescore, stream_seed(c, "inject"), opt);
  const std::string hash = config_hash(c);
  const fs::path dir = reports_dir(c);
  const MeanStd base = mean_std(g.baseline_auc);

  json cells = json::array();
  auto csv = open_out(dir / "grid.csv");
  csv << "# config_hash " << hash << "\n"
      << "uncertainty_quartile,probability_quartile,mean_size,delta_mean,delta_std,percent_mean,percent_std\n";
  std::ostringstream table;
  table << "# config_hash " << hash << "\n";
  table << "baseline retention " << fixed(c.grid_baseline, 2) << ", rescored at " << fixed(c.grid_rescore, 2)
        << "; baseline AUC " << pm(base) << "\n";
  table << "uncertainty  probability  AUC delta            change (%)\n";
  static const char* kRange[] = {"0-25%", "25-50%", "50-75%", "75-100%"};
  for (const auto& cell : g.cells) {
    std::vector<double> pct;
    for (std::size_t m = 0; m < cell.delta.size(); ++m) {
      if (cell.delta[m]) pct.push_back(100.0 * *cell.delta[m] / g.baseline_auc[m]);
    }
    double size = 0.0;
    for (auto s : cell.sizes) size += static_cast<double>(s);
    size /= static_cast<double>(cell.sizes.size());
    json jc{{"uncertainty_quartile", cell.uncertainty_quartile},
            {"probability_quartile", cell.probability_quartile},
            {"sizes", cell.sizes}};
    json deltas = json::array();
    for (const auto& d : cell.delta) deltas.push_back(d ? json(*d) : json(nullptr));
    jc["delta"] = deltas;
    csv << cell.uncertainty_quartile << ',' << cell.probability_quartile << ',' << json(size).dump() << ',';
    table << std::left << std::setw(11) << kRange[cell.uncertainty_quartile] << "  " << std::setw(11)
          << kRange[cell.probability_quartile] << "  ";
    if (cell.delta_summary) {
      const MeanStd p = mean_std(pct);
      jc["delta_summary"] = to_json(*cell.delta_summary);
      jc["percent"] = to_json(p);
      csv << json(cell.delta_summary->mean).dump() << ',' << json(cell.delta_summary->std).dump() << ','
          << json(p.mean).dump() << ',' << json(p.std).dump() << '\n';
      table << std::setw(19) << pm(*cell.delta_summary) << "  " << pm(p) << '\n';
    } else {
      jc["delta_summary"] = nullptr;
      jc["percent"] = nullptr;
      csv << ",,,\n";
      table << "undefined\n";
    }
    cells.push_back(jc);
  }
  write_json(dir / "grid.json", {{"config_hash", hash},
                                 {"baseline_retention", g.baseline_retention},
                                 {"rescore_retention", g.rescore_retention},
                                 {"baseline_auc", g.baseline_auc},
                                 {"cells", cells}});
  auto out = open_out(dir / "grid.txt");
  out << table.str();
  log << table.str();
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Heteroscedastic-uncertainty CNN for clinical time series"};
  app.footer(help_footer());
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_file;
  app.add_option("--config", config_file, "JSON config file")->type_name("FILE");
  std::map<std::string, std::string> flags;
  for (const auto& k : key_table()) {
    app.add_option("--" + flag_name(k.key), flags[k.key], std::string(k.help) + " (default " + k.value.dump() + ")")
        ->type_name("VALUE")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  }
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "write a synthetic corpus (events.csv, labels.csv)"},
      {"train", "train the ensemble(s); one checkpoint per member per variant"},
      {"eval", "test AUC per variant and the median-uncertainty split"},
      {"noise-sweep", "uncertainty and AUC as test observations are removed"},
      {"grid-report", "AUC change per uncertainty x probability cell when rescored with more data"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help)->footer(help_footer());

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  int fallback = kEvaluation;
  if (command == "gen") fallback = kData;
  if (command == "train") fallback = kTraining;
  try {
    json overrides = json::object();
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot read config '" + config_file + "'");
      try {
        overrides = json::parse(in);
      } catch (const json::exception& e) {
        throw ConfigError("config '" + config_file + "': " + e.what());
      }
      if (!overrides.is_object()) throw ConfigError("config must be a JSON object");
    }
    const json reference = defaults();
    for (const auto& k : key_table()) {
      if (app.count("--" + flag_name(k.key)) > 0) overrides[k.key] = parse_flag(k.key, flags[k.key], reference[k.key]);
    }
    const RunConfig config = config_from_json(overrides);
    if (command == "gen") cmd_gen(config, out);
    if (command == "train") cmd_train(config, out);
    if (command == "eval") cmd_eval(config, out);
    if (command == "noise-sweep") cmd_noise_sweep(config, out);
    if (command == "grid-report") cmd_grid_report(config, out);
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kData;
  } catch (const TrainingError& e) {
    err << "training error: " << e.what() << '\n';
    return kTraining;
  } catch (const MetricError& e) {
    err << "evaluation error: " << e.what() << '\n';
    return kEvaluation;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << '\n';
    return fallback;
  }
}

}  // namespace aleatoric::cli
