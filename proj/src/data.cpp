#include "aleatoric/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#ifndef ALEATORIC_DATA_DIR
#define ALEATORIC_DATA_DIR "data"
#endif

namespace aleatoric {

using nlohmann::json;

std::size_t FeatureSchema::value_channels() const {
  std::size_t n = 0;
  for (const auto& f : features) n += f.value_channels();
  return n;
}

std::optional<std::size_t> FeatureSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::value_offset(std::size_t f) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < f; ++i) off += features[i].value_channels();
  return off;
}

FeatureSchema schema_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  FeatureSchema schema;
  std::unordered_set<std::string> seen;
  try {
    for (const auto& f : j.at("features")) {
      FeatureSpec spec;
      spec.name = f.at("name").get<std::string>();
      if (!seen.insert(spec.name).second) throw SchemaError("schema: duplicate feature '" + spec.name + "'");
      const std::string kind = f.at("kind");
      if (kind == "continuous") {
        spec.kind = FeatureKind::Continuous;
        spec.normal_value = f.at("normal").get<double>();
      } else if (kind == "categorical") {
        spec.kind = FeatureKind::Categorical;
        spec.levels = f.at("levels").get<std::vector<std::string>>();
        if (spec.levels.empty()) throw SchemaError("schema: categorical '" + spec.name + "' has no levels");
        const std::string normal = f.at("normal");
        const auto it = std::find(spec.levels.begin(), spec.levels.end(), normal);
        if (it == spec.levels.end()) {
          throw SchemaError("schema: normal level '" + normal + "' of '" + spec.name + "' is not a level");
        }
        spec.normal_value = static_cast<double>(it - spec.levels.begin());
      } else {
        throw SchemaError("schema: feature '" + spec.name + "' has unknown kind '" + kind + "'");
      }
      schema.features.push_back(std::move(spec));
    }
    if (j.contains("normalization")) {
      for (auto& spec : schema.features) {
        if (spec.kind != FeatureKind::Continuous) continue;
        const auto& s = j.at("normalization").at(spec.name);
        spec.mean = s.at("mean");
        spec.std = s.at("std");
        if (!(spec.std > 0.0)) throw SchemaError("schema: std of '" + spec.name + "' must be > 0");
      }
      schema.normalized = true;
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
  if (schema.features.empty()) throw SchemaError("schema: no features");
  return schema;
}

std::string schema_to_json(const FeatureSchema& schema) {
  json features = json::array();
  json norm = json::object();
  for (const auto& f : schema.features) {
    json e{{"name", f.name}};
    if (f.kind == FeatureKind::Continuous) {
      e["kind"] = "continuous";
      e["normal"] = f.normal_value;
      norm[f.name] = {{"mean", f.mean}, {"std", f.std}};
    } else {
      e["kind"] = "categorical";
      e["levels"] = f.levels;
      e["normal"] = f.levels.at(static_cast<std::size_t>(f.normal_value));
    }
    features.push_back(std::move(e));
  }
  json j{{"features", features}};
  if (schema.normalized) j["normalization"] = norm;
  return j.dump(2);
}

FeatureSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return schema_from_json(ss.str());
}

std::filesystem::path reference_schema_path() {
  return std::filesystem::path(ALEATORIC_DATA_DIR) / "reference_schema.json";
}

FeatureSchema reference_schema() { return load_schema(reference_schema_path()); }

Tensor FeatureMatrix::network_input() const {
  const std::size_t hours = values.extent(1);
  Tensor x({values.extent(0) + masks.extent(0), hours});
  std::copy_n(values.data(), values.size(), x.data());
  std::copy_n(masks.data(), masks.size(), x.data() + values.size());
  return x;
}

namespace {

void check_event(const Event& e, const FeatureSchema& schema, std::uint64_t patient) {
  if (e.feature >= schema.features.size()) {
    throw SchemaError("patient " + std::to_string(patient) + ": unknown feature id " + std::to_string(e.feature));
  }
  if (!std::isfinite(e.value)) {
    throw DataError("patient " + std::to_string(patient) + ": non-finite value for '" +
                    schema.features[e.feature].name + "'");
  }
  if (!(e.hour >= 0.0 && e.hour < static_cast<double>(kObservationHours))) {
    throw DataError("patient " + std::to_string(patient) + ": event hour outside [0, 48)");
  }
  const auto& spec = schema.features[e.feature];
  if (spec.kind == FeatureKind::Categorical) {
    if (e.value != std::floor(e.value) || e.value < 0.0 || e.value >= static_cast<double>(spec.levels.size())) {
      throw SchemaError("patient " + std::to_string(patient) + ": level index out of range for '" + spec.name + "'");
    }
  }
}

// Raw (unnormalized) last-observation-per-bin grid: [features][hour] -> value or NaN.
std::vector<std::array<double, kObservationHours>> bin_last(const PatientRecord& record,
                                                           const FeatureSchema& schema) {
  std::vector<std::array<double, kObservationHours>> grid(schema.features.size());
  std::vector<std::array<double, kObservationHours>> when(schema.features.size());
  for (auto& row : grid) row.fill(std::numeric_limits<double>::quiet_NaN());
  for (auto& row : when) row.fill(-1.0);
  for (const auto& e : record.events) {
    check_event(e, schema, record.patient_id);
    const auto bin = static_cast<std::size_t>(e.hour);
    // Last by time; among equal times the later event in the list wins.
    if (e.hour >= when[e.feature][bin]) {
      when[e.feature][bin] = e.hour;
      grid[e.feature][bin] = e.value;
    }
  }
  return grid;
}

}  // namespace

FeatureMatrix bin_and_impute(const PatientRecord& record, const FeatureSchema& schema) {
  if (record.label != 0 && record.label != 1) {
    throw DataError("patient " + std::to_string(record.patient_id) + ": label must be 0 or 1");
  }
  const auto grid = bin_last(record, schema);
  FeatureMatrix m;
  m.patient_id = record.patient_id;
  m.label = record.label;
  m.values = Tensor({schema.value_channels(), kObservationHours});
  m.masks = Tensor({schema.mask_channels(), kObservationHours});

  std::size_t channel = 0;
  for (std::size_t f = 0; f < schema.features.size(); ++f) {
    const auto& spec = schema.features[f];
    double current = spec.normal_value;
    for (std::size_t t = 0; t < kObservationHours; ++t) {
      if (!std::isnan(grid[f][t])) {
        current = grid[f][t];
        m.masks(f, t) = 1.0;
      }
      if (spec.kind == FeatureKind::Continuous) {
        m.values(channel, t) = schema.normalized ? (current - spec.mean) / spec.std : current;
      } else {
        m.values(channel + static_cast<std::size_t>(current), t) = 1.0;
      }
    }
    channel += spec.value_channels();
  }
  m.values.check_finite("bin_and_impute");
  return m;
}

FeatureSchema fit_normalization(const FeatureSchema& schema, const std::vector<PatientRecord>& records) {
  const std::size_t n_features = schema.features.size();
  std::vector<double> sum(n_features, 0.0), count(n_features, 0.0);
  std::vector<std::vector<double>> observed(n_features);
  for (const auto& r : records) {
    const auto grid = bin_last(r, schema);
    for (std::size_t f = 0; f < n_features; ++f) {
      if (schema.features[f].kind != FeatureKind::Continuous) continue;
      for (double v : grid[f]) {
        if (!std::isnan(v)) observed[f].push_back(v);
      }
    }
  }
  FeatureSchema fitted = schema;
  for (std::size_t f = 0; f < n_features; ++f) {
    auto& spec = fitted.features[f];
    if (spec.kind != FeatureKind::Continuous) continue;
    const auto& xs = observed[f];
    if (xs.empty()) {
      spec.mean = 0.0;
      spec.std = 1.0;
      continue;
    }
    const double n = static_cast<double>(xs.size());
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    spec.mean = mean;
    spec.std = sd > 0.0 ? sd : 1.0;
  }
  fitted.normalized = true;
  return fitted;
}

PatientRecord inject_missingness(const PatientRecord& record, double retention, RngStream& rng) {
  if (!(retention >= 0.0 && retention <= 1.0)) throw DomainError("inject_missingness: retention outside [0, 1]");
  PatientRecord out;
  out.patient_id = record.patient_id;
  out.label = record.label;
  out.events.reserve(record.events.size());
  for (const auto& e : record.events) {
    if (rng.uniform() < retention) out.events.push_back(e);
  }
  return out;
}

RngStream injection_stream(std::uint64_t seed, std::uint64_t patient_id) {
  return RngStream::derive(seed, "inject", patient_id);
}

std::array<std::size_t, 3> split_sizes(std::size_t n, SplitFractions fractions) {
  const std::array<double, 3> f{fractions.train, fractions.val, fractions.test};
  for (double x : f) {
    if (!(x >= 0.0)) throw DomainError("split: fractions must be non-negative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) throw DomainError("split: fractions must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * f[k];
    // Absorb representation error such as 0.7 * 100 = 69.999...
    const double whole = std::floor(exact + 1e-9);
    sizes[k] = static_cast<std::size_t>(whole);
    remainder[k] = std::max(0.0, exact - whole);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; k = (k + 1) % 3, ++assigned) ++sizes[order[k]];
  return sizes;
}

Splits split(const std::vector<PatientRecord>& records, SplitFractions fractions, std::uint64_t seed) {
  const auto sizes = split_sizes(records.size(), fractions);
  std::unordered_set<std::uint64_t> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.patient_id).second) throw DataError("split: duplicate patient_id " + std::to_string(r.patient_id));
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng = RngStream::derive(seed, "split");
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);
  Splits s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& dst = k < sizes[0] ? s.train : (k < sizes[0] + sizes[1] ? s.val : s.test);
    dst.push_back(records[order[k]]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (r.ec == std::errc() && r.ptr == end) return v;
  // from_chars rejects "nan"/"inf" spellings on some libraries; treat them as non-finite data.
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "nan" || lower == "-nan" || lower == "inf" || lower == "-inf") {
    return lower.find("nan") != std::string::npos ? std::numeric_limits<double>::quiet_NaN()
                                                  : std::numeric_limits<double>::infinity();
  }
  throw DataError(where + ": cannot parse number '" + s + "'");
}

std::uint64_t parse_id(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw DataError(where + ": bad patient_id '" + s + "'");
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_events(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const FeatureSchema& schema, const std::vector<std::string>& provenance) {
  auto out = open_out(path);
  for (const auto& p : provenance) out << "# " << p << '\n';
  out << "patient_id,hour,feature_name,value\n";
  for (const auto& r : records) {
    for (const auto& e : r.events) {
      check_event(e, schema, r.patient_id);
      const auto& spec = schema.features[e.feature];
      out << r.patient_id << ',' << format_double(e.hour) << ',' << spec.name << ',';
      if (spec.kind == FeatureKind::Categorical) {
        out << spec.levels[static_cast<std::size_t>(e.value)];
      } else {
        out << format_double(e.value);
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_labels(const std::filesystem::path& path, const std::vector<PatientRecord>& records,
                  const std::vector<std::string>& provenance) {
  auto out = open_out(path);
  for (const auto& p : provenance) out << "# " << p << '\n';
  out << "patient_id,label\n";
  for (const auto& r : records) out << r.patient_id << ',' << r.label << '\n';
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<PatientRecord> read_records(const std::filesystem::path& events_path,
                                        const std::filesystem::path& labels_path, const FeatureSchema& schema) {
  std::ifstream labels(labels_path);
  if (!labels) throw IoError("cannot open labels file '" + labels_path.string() + "'");
  std::vector<PatientRecord> records;
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(labels, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = labels_path.filename().string() + ":" + std::to_string(lineno);
    const auto cells = split_csv(line);
    if (!header) {
      if (cells.size() != 2 || cells[0] != "patient_id" || cells[1] != "label") {
        throw DataError(where + ": expected header 'patient_id,label'");
      }
      header = true;
      continue;
    }
    if (cells.size() != 2) throw DataError(where + ": expected 2 fields");
    PatientRecord r;
    r.patient_id = parse_id(cells[0], where);
    if (cells[1] != "0" && cells[1] != "1") throw DataError(where + ": label must be 0 or 1");
    r.label = cells[1] == "1" ? 1 : 0;
    if (!index.emplace(r.patient_id, records.size()).second) throw DataError(where + ": duplicate patient_id");
    records.push_back(std::move(r));
  }

  std::ifstream events(events_path);
  if (!events) throw IoError("cannot open events file '" + events_path.string() + "'");
  std::unordered_map<std::string, std::size_t> feature_index;
  for (std::size_t f = 0; f < schema.features.size(); ++f) feature_index[schema.features[f].name] = f;
  header = false;
  lineno = 0;
  while (std::getline(events, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = events_path.filename().string() + ":" + std::to_string(lineno);
    const auto cells = split_csv(line);
    if (!header) {
      if (cells.size() != 4 || cells[0] != "patient_id" || cells[1] != "hour" || cells[2] != "feature_name" ||
          cells[3] != "value") {
        throw DataError(where + ": expected header 'patient_id,hour,feature_name,value'");
      }
      header = true;
      continue;
    }
    if (cells.size() != 4) throw DataError(where + ": expected 4 fields");
    const auto id = parse_id(cells[0], where);
    const auto rec = index.find(id);
    if (rec == index.end()) throw DataError(where + ": patient " + cells[0] + " has no label");
    const auto f = feature_index.find(cells[2]);
    if (f == feature_index.end()) throw SchemaError(where + ": unknown feature '" + cells[2] + "'");
    const auto& spec = schema.features[f->second];
    Event e;
    e.hour = parse_double(cells[1], where);
    e.feature = f->second;
    if (spec.kind == FeatureKind::Categorical) {
      const auto it = std::find(spec.levels.begin(), spec.levels.end(), cells[3]);
      if (it == spec.levels.end()) throw SchemaError(where + ": unknown level '" + cells[3] + "' for " + spec.name);
      e.value = static_cast<double>(it - spec.levels.begin());
    } else {
      e.value = parse_double(cells[3], where);
    }
    try {
      check_event(e, schema, id);
    } catch (const Error& err) {
      throw DataError(where + ": " + err.what());
    }
    records[rec->second].events.push_back(e);
  }
  if (!header && lineno > 0) throw DataError(events_path.string() + ": missing header");
  return records;
}

void save_matrix_cache(const std::filesystem::path& path, const std::vector<FeatureMatrix>& matrices,
                       const std::string& metadata) {
  json meta{{"kind", "matrix_cache"}, {"extra", json::parse(metadata)}};
  json ids = json::array(), labels = json::array();
  TensorTable table;
  for (const auto& m : matrices) {
    ids.push_back(m.patient_id);
    labels.push_back(m.label);
    table.tensors.emplace_back("values/" + std::to_string(m.patient_id), m.values);
    table.tensors.emplace_back("masks/" + std::to_string(m.patient_id), m.masks);
  }
  meta["ids"] = ids;
  meta["labels"] = labels;
  table.metadata = meta.dump();
  save_table(path, table);
}

std::vector<FeatureMatrix> load_matrix_cache(const std::filesystem::path& path) {
  const TensorTable table = load_table(path);
  const json meta = json::parse(table.metadata);
  if (meta.value("kind", "") != "matrix_cache") throw IoError("'" + path.string() + "' is not a matrix cache");
  const auto ids = meta.at("ids").get<std::vector<std::uint64_t>>();
  const auto labels = meta.at("labels").get<std::vector<int>>();
  std::vector<FeatureMatrix> out;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    FeatureMatrix m;
    m.patient_id = ids[k];
    m.label = labels.at(k);
    m.values = table.at("values/" + std::to_string(ids[k]));
    m.masks = table.at("masks/" + std::to_string(ids[k]));
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace aleatoric
