#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gsteg/cli.hpp"
#include "gsteg/inference.hpp"
#include "gsteg/io.hpp"
#include "gsteg/synth.hpp"
#include "helpers.hpp"

using namespace gsteg;
using namespace gsteg::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("gsteg_unit_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

const char* kConfig = R"({
  "seed": 11,
  "model": {"mode": "gsteg", "rank": 2},
  "train": {"optimizer": "adam", "learning_rate": 0.01, "batch_size": 8, "epochs": 2, "num_passes": 2},
  "synth": {"num_streams": 2, "num_steps": 3, "label_sizes": [3, 3], "num_contexts": 2,
            "context_strength": 1.0, "noise_std": 0.5, "num_train": 24, "num_test": 10}
})";

std::string relations_jsonl(const std::vector<std::pair<std::string, RelationInstance>>& rels) {
  std::string s;
  for (const auto& [video, r] : rels) s += relation_to_json(video, r).dump() + "\n";
  return s;
}

RelationInstance rel(Triplet t, double score) {
  RelationInstance r;
  r.triplet = t;
  r.score = score;
  r.span = {0, 2};
  r.subject = Trajectory(0, {{0, 0, 10, 10}, {0, 0, 10, 10}});
  r.object = Trajectory(0, {{20, 20, 30, 30}, {20, 20, 30, 30}});
  return r;
}

}  // namespace

TEST_CASE("instance json round trip") {
  ObservationInstance inst = constant_instance(spec_of(2, 2, {2, 3}, {1, 2}), {{0.1}, {1.0 / 3.0, -2e-300}});
  inst.gold = labels({{1, 2}, {0, 0}});
  inst.meta = {{"video", "a"}};
  const ObservationInstance back = instance_from_json(json::parse(instance_to_json(inst).dump()));
  CHECK(back == inst);
}

TEST_CASE("model and checkpoint json round trip") {
  ModelConfig cfg;
  cfg.mode = Mode::gsteg;
  cfg.rank = 2;
  cfg.hidden = {3};
  const EnergyModel m = EnergyModel::create(spec_of(2, 2, {3, 4}, {2, 2}), cfg, 5);
  for (const json& j : {json::parse(model_to_json(m).dump()), json::parse(checkpoint_to_json(m, nullptr).dump())}) {
    const EnergyModel back = j.contains("optimizer") ? model_from_checkpoint(j) : model_from_json(j);
    REQUIRE(back.tensors().size() == m.tensors().size());
    for (std::size_t i = 0; i < m.tensors().size(); ++i) {
      CHECK(back.tensors()[i].name == m.tensors()[i].name);
      CHECK(back.tensors()[i].values == m.tensors()[i].values);
    }
    CHECK(back.config().hidden == cfg.hidden);
  }
}

TEST_CASE("read_instances reports the failing line") {
  TempDir dir;
  ObservationInstance inst = zero_instance(spec_of(1, 1, {2}, {1}));
  put(dir / "x.jsonl", instance_to_json(inst).dump() + "\n\n{not json\n");
  try {
    read_instances(dir / "x.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(read_instances(dir / "missing.jsonl"), DataError);
}

TEST_CASE("cli exit codes") {
  TempDir dir;
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"bogus"}).code == kExitUsage);
  CHECK(cli({"train", "--mode", "nope"}).code == kExitUsage);
  CHECK(cli({"train", "--config", dir / "missing.json"}).code == kExitData);
  CHECK(cli({"eval", "--pred", dir / "p.jsonl", "--gt", dir / "g.jsonl"}).code == kExitData);
  put(dir / "bad.json", R"({"seed": 1, "surprise": true})");
  CHECK(cli({"train", "--config", dir / "bad.json"}).code == kExitData);
  CHECK(cli({"verify", "metrics", "--cases", "5"}).code == kExitOk);
  const Run skipped = cli({"verify", "freeenergy", "--schedule", "parallel", "--cases", "3"});
  CHECK(skipped.code == kExitOk);
  CHECK(skipped.out.find("SKIP") != std::string::npos);
}

TEST_CASE("cli train with zero learning rate keeps the initial parameters") {
  TempDir dir;
  json cfg = json::parse(kConfig);
  cfg["train"]["learning_rate"] = 0.0;
  cfg["out"] = dir.path.string();
  put(dir / "cfg.json", cfg.dump());
  REQUIRE(cli({"train", "--config", dir / "cfg.json"}).code == kExitOk);
  const EnergyModel trained = model_from_checkpoint(read_json_file(dir / "checkpoint.json"));
  const ExperimentConfig ec = experiment_from_json(cfg);
  const EnergyModel init = EnergyModel::create(generate_dataset(synth_config_for(ec)).front().spec,
                                               ec.model, ec.seed);
  REQUIRE(trained.tensors().size() == init.tensors().size());
  for (std::size_t i = 0; i < init.tensors().size(); ++i) CHECK(trained.tensors()[i].values == init.tensors()[i].values);
}

TEST_CASE("cli infer on a unary model returns the softmax") {
  TempDir dir;
  const GraphSpec spec = spec_of(1, 2, {3}, {1});
  ModelConfig mc;
  mc.mode = Mode::ueg;
  EnergyModel m = EnergyModel::create(spec, mc, 1);
  zero_all(m);
  set(m, "unary.0.b0", {0.0, 1.0, 2.0});
  put(dir / "model.json", model_to_json(m).dump());
  ObservationInstance inst = zero_instance(spec);
  put(dir / "x.jsonl", instance_to_json(inst).dump() + "\n");
  REQUIRE(cli({"infer", "--checkpoint", dir / "model.json", "--instances", dir / "x.jsonl", "--out", dir.path.string()})
              .code == kExitOk);
  const json row = json::parse(slurp(dir / "marginals.jsonl"));
  const double z = 1 + std::exp(-1.0) + std::exp(-2.0);
  const auto q = row.at("marginals").at(0).at(0).get<std::vector<double>>();
  CHECK(q[0] == doctest::Approx(1 / z).epsilon(1e-12));
  CHECK(q[2] == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-12));
  CHECK(row.at("labels") == json::parse("[[0],[0]]"));
}

TEST_CASE("cli eval on relation files") {
  TempDir dir;
  const Triplet a{0, 0, 0}, b{1, 1, 1}, x{2, 2, 2};
  put(dir / "gt.jsonl", relations_jsonl({{"v", rel(a, 1)}, {"v", rel(b, 1)}}));
  put(dir / "pred.jsonl", relations_jsonl({{"v", rel(x, 0.5)}, {"v", rel(b, 0.2)}, {"v", rel(a, 0.9)}}));
  const Run r = cli({"eval", "--pred", dir / "pred.jsonl", "--gt", dir / "gt.jsonl", "--k", "2", "--out", dir.path.string()});
  REQUIRE(r.code == kExitOk);
  const json report = read_json_file(dir / "report.json");
  CHECK(report.dump(2) + "\n" == r.out);
  CHECK(report.at("recall_at").at("2").get<double>() == 0.5);
  CHECK(report.at("mAP").get<double>() == doctest::Approx(5.0 / 6.0).epsilon(1e-15));

  put(dir / "train_triplets.json", "[[0,0,0],[1,1,1]]");
  const Run zs = cli({"eval", "--pred", dir / "pred.jsonl", "--gt", dir / "gt.jsonl", "--zero-shot",
                      dir / "train_triplets.json"});
  CHECK(zs.code == kExitOk);
  CHECK(zs.err.find("warning") != std::string::npos);
  CHECK(json::parse(zs.out).at("mAP").is_null());
}

TEST_CASE("cli pipeline is byte-for-byte deterministic") {
  std::vector<std::string> reports, checkpoints;
  for (int rep = 0; rep < 2; ++rep) {
    TempDir dir;
    json cfg = json::parse(kConfig);
    cfg["out"] = dir.path.string();
    put(dir / "cfg.json", cfg.dump());
    REQUIRE(cli({"synth", "--config", dir / "cfg.json"}).code == kExitOk);
    REQUIRE(cli({"train", "--config", dir / "cfg.json"}).code == kExitOk);
    REQUIRE(cli({"infer", "--checkpoint", dir / "checkpoint.json", "--instances", dir / "test.jsonl", "--out",
                 dir.path.string()})
                .code == kExitOk);
    REQUIRE(cli({"eval", "--task", "recognize", "--pred", dir / "marginals.jsonl", "--gt", dir / "test.jsonl", "--out",
                 dir.path.string()})
                .code == kExitOk);
    reports.push_back(slurp(dir / "report.json"));
    checkpoints.push_back(slurp(dir / "checkpoint.json"));
  }
  CHECK(reports[0] == reports[1]);
  CHECK(checkpoints[0] == checkpoints[1]);
  CHECK(json::parse(reports[0]).at("acc_at_1").contains("relationship"));
}
