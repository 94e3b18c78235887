#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aleatoric/cli.hpp"
#include "aleatoric/synthetic.hpp"

using namespace aleatoric;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "aleatoric");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }

  // Small enough to run in seconds.
  std::vector<std::string> flags(const std::string& sub) const {
    return {sub,
            "--data-dir",
            (root / "data").string(),
            "--out-dir",
            (root / "out").string(),
            "--patients",
            "240",
            "--ensemble",
            "2",
            "--epochs",
            "2",
            "--filters",
            "4",
            "--mc-samples",
            "5",
            "--eval-mc-samples",
            "5",
            "--seed",
            "7"};
  }
};

std::vector<std::string> with(std::vector<std::string> a, std::initializer_list<std::string> more) {
  a.insert(a.end(), more);
  return a;
}

}  // namespace

TEST_CASE("help lists every key with its default") {
  const Result r = invoke({"--help"});
  CHECK(r.code == 0);
  const json d = cli::defaults();
  for (const auto& [key, value] : d.items()) {
    CAPTURE(key);
    CHECK(r.out.find(key) != std::string::npos);
    CHECK(r.out.find(value.dump()) != std::string::npos);
  }
  CHECK(cli::key_help().size() == d.size());
  for (const char* sub : {"gen", "train", "eval", "noise-sweep", "grid-report"}) CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("config errors exit 1") {
  Workspace ws("aleatoric_cli_config");
  CHECK(invoke({}).code == cli::kUsage);
  CHECK(invoke({"frobnicate"}).code == cli::kUsage);
  CHECK(invoke({"gen", "--no-such-flag", "1"}).code == cli::kUsage);
  CHECK(invoke({"gen", "--patients", "many"}).code == cli::kUsage);
  CHECK(invoke({"gen", "--keep-prob", "0"}).code == cli::kUsage);

  std::ofstream(ws.root / "bad.json") << R"({"patients": 10, "not_a_key": 3})";
  const Result r = invoke({"gen", "--config", (ws.root / "bad.json").string()});
  CHECK(r.code == cli::kUsage);
  CHECK(r.err.find("not_a_key") != std::string::npos);
  std::ofstream(ws.root / "typed.json") << R"({"patients": "ten"})";
  CHECK(invoke({"gen", "--config", (ws.root / "typed.json").string()}).code == cli::kUsage);
  CHECK(invoke({"gen", "--config", (ws.root / "missing.json").string()}).code == cli::kUsage);
  CHECK_THROWS_AS(cli::config_from_json(json{{"split", {0.5, 0.5}}}), ConfigError);
}

TEST_CASE("config precedence and hashing") {
  Workspace ws("aleatoric_cli_hash");
  cli::RunConfig a = cli::config_from_json(json::object());
  cli::RunConfig b = a;
  b.threads = 3;
  CHECK(cli::config_hash(a) == cli::config_hash(b));
  b.seed = 2;
  CHECK(cli::config_hash(a) != cli::config_hash(b));
  CHECK(cli::config_hash(a).size() == 16);
  CHECK(cli::config_from_json(cli::to_json(b)).seed == 2);
  CHECK(cli::stream_seed(a, "train") != cli::stream_seed(a, "split"));

  // Flags win over the file.
  std::ofstream(ws.root / "c.json") << json{{"patients", 30}, {"seed", 3}, {"data_dir", (ws.root / "d").string()}}.dump();
  REQUIRE(invoke({"gen", "--config", (ws.root / "c.json").string(), "--patients", "20"}).code == 0);
  const auto recs = read_records(ws.root / "d" / "events.csv", ws.root / "d" / "labels.csv", reference_schema());
  CHECK(recs.size() == 20);
}

TEST_CASE("gen: deterministic files that parse back") {
  Workspace ws("aleatoric_cli_gen");
  const auto f = ws.flags("gen");
  REQUIRE(invoke(f).code == 0);
  const std::string ev = slurp(ws.root / "data" / "events.csv"), lb = slurp(ws.root / "data" / "labels.csv");
  REQUIRE(invoke(f).code == 0);
  CHECK(slurp(ws.root / "data" / "events.csv") == ev);
  CHECK(slurp(ws.root / "data" / "labels.csv") == lb);
  CHECK(ev.find("# seed 7") != std::string::npos);
  CHECK(ev.find("# generator ") != std::string::npos);
  CHECK(lb.find("# positive_rate") != std::string::npos);
  CHECK(ev.find("# config_hash") != std::string::npos);

  const cli::RunConfig cfg = cli::config_from_json(json{{"seed", 7}, {"patients", 240}});
  const auto direct = generate_synthetic(240, reference_schema(), GeneratorConfig::reference(), cli::stream_seed(cfg, "generate"));
  const auto back = read_records(ws.root / "data" / "events.csv", ws.root / "data" / "labels.csv", reference_schema());
  REQUIRE(back.size() == direct.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].label == direct[i].label);
    const FeatureMatrix m1 = bin_and_impute(back[i], reference_schema()), m2 = bin_and_impute(direct[i], reference_schema());
    CHECK(m1.values == m2.values);
    CHECK(m1.masks == m2.masks);
  }
}

TEST_CASE("NaN in the data: exit 2 and no checkpoint") {
  Workspace ws("aleatoric_cli_nan");
  auto f = ws.flags("gen");
  REQUIRE(invoke(f).code == 0);
  const fs::path events = ws.root / "data" / "events.csv";
  std::string text = slurp(events);
  // Corrupt the value of the last event row.
  const auto last_comma = text.rfind(',', text.size() - 2);
  text = text.substr(0, last_comma + 1) + "nan\n";
  std::ofstream(events, std::ios::trunc) << text;
  f[0] = "train";
  const Result r = invoke(f);
  CHECK(r.code == cli::kData);
  CHECK(!r.err.empty());
  const fs::path ckpts = ws.root / "out" / "checkpoints";
  const bool none = !fs::exists(ckpts) || fs::is_empty(ckpts);
  CHECK(none);
}

TEST_CASE("missing checkpoints exit 4, benchmark-only sweep exits 1") {
  Workspace ws("aleatoric_cli_missing");
  auto f = ws.flags("gen");
  REQUIRE(invoke(f).code == 0);
  f[0] = "eval";
  const Result r = invoke(f);
  CHECK(r.code == cli::kEvaluation);
  CHECK(r.err.find("checkpoint") != std::string::npos);

  f[0] = "train";
  REQUIRE(invoke(with(f, {"--variant", "benchmark", "--ensemble", "1"})).code == 0);
  CHECK(fs::exists(cli::checkpoint_path(cli::config_from_json(json{{"out_dir", (ws.root / "out").string()}}),
                                        Variant::Benchmark, 0)));
  f[0] = "noise-sweep";
  // The sweep needs variance estimates: a benchmark-only config is a usage error.
  CHECK(invoke(with(f, {"--variant", "benchmark", "--ensemble", "1"})).code == cli::kUsage);
}

TEST_CASE("full pipeline: consistent, complete and bit-reproducible") {
  Workspace ws("aleatoric_cli_pipeline");
  auto f = ws.flags("gen");
  REQUIRE(invoke(f).code == 0);
  for (const char* sub : {"train", "eval", "grid-report"}) {
    f[0] = sub;
    const Result r = invoke(f);
    CAPTURE(r.err);
    REQUIRE(r.code == 0);
  }
  f[0] = "noise-sweep";
  REQUIRE(invoke(with(f, {"--retentions", "1.0"})).code == 0);

  const fs::path reports = ws.root / "out" / "reports";
  const json eval = json::parse(slurp(reports / "eval.json"));
  const json sweep = json::parse(slurp(reports / "sweep.json"));
  CHECK(eval["comparison"]["bayesian"]["per_model"].size() == 2);
  CHECK(eval["comparison"]["benchmark"].contains("std"));
  for (std::size_t m = 0; m < 2; ++m)
    CHECK(sweep["rows"][0]["per_model"][m]["auc"].get<double>() ==
          eval["comparison"]["bayesian"]["per_model"][m].get<double>());

  // Replay the evaluation through the library.
  const cli::RunConfig cfg = cli::config_from_json(json{{"out_dir", (ws.root / "out").string()}});
  const Checkpoint ck = Checkpoint::load(cli::checkpoint_path(cfg, Variant::Bayesian, 1));
  CHECK(json::parse(ck.extra).contains("config_hash"));

  std::istringstream grid(slurp(reports / "grid.csv"));
  std::size_t rows = 0;
  for (std::string line; std::getline(grid, line);)
    if (!line.empty() && line[0] != '#' && line.rfind("uncertainty", 0) != 0) ++rows;
  CHECK(rows == 16);

  for (const auto& entry : fs::directory_iterator(reports)) {
    CAPTURE(entry.path());
    CHECK(slurp(entry.path()).find("config_hash") != std::string::npos);
  }
  for (const auto& entry : fs::directory_iterator(ws.root / "out" / "logs"))
    CHECK(slurp(entry.path()).find("config_hash") != std::string::npos);

  // Second run into a fresh directory: every file identical.
  std::map<fs::path, std::string> first;
  for (const auto& entry : fs::recursive_directory_iterator(ws.root / "out"))
    if (entry.is_regular_file()) first[fs::relative(entry.path(), ws.root / "out")] = slurp(entry.path());
  fs::remove_all(ws.root / "out");
  for (const char* sub : {"train", "eval", "grid-report"}) {
    f[0] = sub;
    REQUIRE(invoke(f).code == 0);
  }
  f[0] = "noise-sweep";
  REQUIRE(invoke(with(f, {"--retentions", "1.0", "--threads", "1"})).code == 0);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(ws.root / "out")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), ws.root / "out");
    CAPTURE(rel);
    REQUIRE(first.count(rel) == 1);
    CHECK(slurp(entry.path()) == first[rel]);
    ++compared;
  }
  CHECK(compared == first.size());
}
