#include "gsteg/cli.hpp"

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "gsteg/eval.hpp"
#include "gsteg/inference.hpp"
#include "gsteg/io.hpp"
#include "gsteg/verify.hpp"

namespace gsteg {

namespace {

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw DataError("'" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw DataError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(where + "." + key + " has the wrong type");
  }
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, "model", {"mode", "rank", "bandwidth", "hidden", "pairwise_scale", "message_rule",
                              "label_embeddings"});
  ModelConfig m;
  std::string mode = "gsteg", rule = "symmetric";
  read_opt(j, "mode", mode, "model");
  read_opt(j, "message_rule", rule, "model");
  m.mode = parse_mode(mode);
  m.message_rule = parse_message_rule(rule);
  read_opt(j, "rank", m.rank, "model");
  read_opt(j, "bandwidth", m.bandwidth, "model");
  read_opt(j, "hidden", m.hidden, "model");
  read_opt(j, "pairwise_scale", m.pairwise_scale, "model");
  std::vector<std::vector<std::vector<double>>> emb;
  read_opt(j, "label_embeddings", emb, "model");
  for (const auto& table : emb) {
    const Eigen::Index cols = table.empty() ? 0 : static_cast<Eigen::Index>(table[0].size());
    Matrix e(static_cast<Eigen::Index>(table.size()), cols);
    for (std::size_t r = 0; r < table.size(); ++r) {
      if (static_cast<Eigen::Index>(table[r].size()) != cols) throw DataError("model.label_embeddings rows differ in length");
      for (Eigen::Index c = 0; c < cols; ++c) e(static_cast<Eigen::Index>(r), c) = table[r][c];
    }
    m.label_embeddings.push_back(e);
  }
  return m;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, "train", {"optimizer", "learning_rate", "batch_size", "epochs", "num_passes", "schedule",
                              "damping", "tolerance", "gradient_clip", "dropout"});
  TrainConfig t = TrainConfig::imagenet_defaults();
  std::string opt = "adam";
  read_opt(j, "optimizer", opt, "train");
  t.optimizer = parse_optimizer(opt);
  read_opt(j, "learning_rate", t.learning_rate, "train");
  read_opt(j, "batch_size", t.batch_size, "train");
  read_opt(j, "epochs", t.epochs, "train");
  read_opt(j, "num_passes", t.inference.num_passes, "train");
  std::string schedule = "sequential";
  read_opt(j, "schedule", schedule, "train");
  if (schedule == "sequential") {
    t.inference.schedule = Schedule::sequential;
  } else if (schedule == "parallel") {
    t.inference.schedule = Schedule::parallel;
  } else {
    throw DataError("train.schedule must be 'sequential' or 'parallel'");
  }
  read_opt(j, "damping", t.inference.damping, "train");
  read_opt(j, "tolerance", t.inference.tolerance, "train");
  if (j.contains("gradient_clip") && !j.at("gradient_clip").is_null()) {
    double clip = 0.0;
    read_opt(j, "gradient_clip", clip, "train");
    t.gradient_clip = clip;
  }
  read_opt(j, "dropout", t.dropout, "train");
  return t;
}

SynthSplit synth_split_from_json(const json& j) {
  reject_unknown(j, "synth", {"num_streams", "num_steps", "label_sizes", "num_contexts", "context_strength",
                              "noise_std", "num_train", "num_test", "coupling_strength", "mirror_contexts"});
  SynthSplit s;
  int streams = 3, steps = 2;
  read_opt(j, "num_streams", streams, "synth");
  read_opt(j, "num_steps", steps, "synth");
  std::vector<int> labels(static_cast<std::size_t>(std::max(streams, 0)), 3);
  read_opt(j, "label_sizes", labels, "synth");
  read_opt(j, "num_contexts", s.synth.num_contexts, "synth");
  read_opt(j, "context_strength", s.synth.context_strength, "synth");
  read_opt(j, "noise_std", s.synth.noise_std, "synth");
  read_opt(j, "coupling_strength", s.synth.coupling_strength, "synth");
  read_opt(j, "mirror_contexts", s.synth.mirror_contexts, "synth");
  read_opt(j, "num_train", s.num_train, "synth");
  read_opt(j, "num_test", s.num_test, "synth");
  if (s.num_train < 1 || s.num_test < 0) throw DataError("synth.num_train must be >= 1 and num_test >= 0");
  s.synth.spec = SynthConfig::make_spec(streams, steps, labels, s.synth.num_contexts);
  s.synth.num_instances = s.num_train + s.num_test;
  return s;
}

std::uint64_t to_seed(const json& j) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw DataError("seed must be a non-negative integer");
}

std::vector<ObservationInstance> synth_instances(const ExperimentConfig& cfg, bool train_part) {
  const SynthConfig sc = synth_config_for(cfg);
  std::vector<ObservationInstance> all = generate_dataset(sc);
  const auto split = all.begin() + cfg.synth->num_train;
  return train_part ? std::vector<ObservationInstance>(all.begin(), split)
                    : std::vector<ObservationInstance>(split, all.end());
}

std::string jsonl(const std::vector<json>& rows) {
  std::string text;
  for (const json& r : rows) text += r.dump() + "\n";
  return text;
}

Schedule parse_schedule(const std::string& s) {
  if (s == "parallel") return Schedule::parallel;
  return Schedule::sequential;
}

// ---------------------------------------------------------------------------

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> passes;
  std::string mode;
};

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = load_experiment(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  if (!f.out.empty()) cfg.out = f.out;
  if (f.passes) cfg.train.inference.num_passes = *f.passes;
  if (!f.mode.empty()) cfg.model.mode = parse_mode(f.mode);
  return cfg;
}

int cmd_synth(const CommonFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f);
  if (!cfg.synth) throw DataError("config has no 'synth' section");
  const std::vector<ObservationInstance> train = synth_instances(cfg, true);
  const std::vector<ObservationInstance> test = synth_instances(cfg, false);
  write_instances(cfg.out / "train.jsonl", train);
  write_instances(cfg.out / "test.jsonl", test);
  json summary = {{"train", train.size()}, {"test", test.size()}, {"seed", cfg.seed}};
  try {
    if (!test.empty()) {
      const BayesAccuracy bayes = bayes_accuracy(synth_config_for(cfg), test);
      summary["bayes_triplet_acc"] = bayes.triplet;
      summary["bayes_entity_acc"] = bayes.entity;
    }
  } catch (const CapacityError&) {
    summary["bayes_triplet_acc"] = nullptr;
  }
  write_text_file(cfg.out / "synth_summary.json", summary.dump(2) + "\n");
  out << "wrote " << train.size() << " train and " << test.size() << " test instances to " << cfg.out.string()
      << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& f, std::ostream& out) {
  ExperimentConfig cfg = resolve(f);
  std::vector<ObservationInstance> data;
  if (cfg.synth) {
    data = synth_instances(cfg, true);
  } else if (!cfg.train_data.empty()) {
    if (!std::filesystem::exists(cfg.train_data)) throw DataError("training data not found", cfg.train_data.string());
    data = read_instances(cfg.train_data);
  } else {
    throw DataError("config needs a 'synth' section or data.train");
  }
  if (data.empty()) throw DataError("no training instances");

  EnergyModel model = EnergyModel::create(data.front().spec, cfg.model, cfg.seed);
  std::vector<json> log_rows;
  const TrainResult result = train(std::move(model), data, cfg.train, [&](const TrainLogRecord& r) {
    log_rows.push_back({{"epoch", r.epoch}, {"batch", r.batch}, {"loss", r.loss}, {"grad_norm", r.grad_norm},
                        {"wall_ms", r.wall_ms}});
  });
  write_text_file(cfg.out / "checkpoint.json", checkpoint_to_json(result.model, &result.state).dump() + "\n");
  write_text_file(cfg.out / "train_log.jsonl", jsonl(log_rows));
  write_text_file(cfg.out / "loss_trace.json", json{{"epoch_loss", result.epoch_loss}}.dump(2) + "\n");
  out << "trained " << to_string(cfg.model.mode) << " on " << data.size() << " instances; final epoch loss "
      << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  return kExitOk;
}

struct InferFlags {
  std::string checkpoint;
  std::string instances;
  std::string schedule = "sequential";
  double damping = 0.5;
};

int cmd_infer(const CommonFlags& f, const InferFlags& i, std::ostream& out) {
  InferenceOptions opts;
  opts.num_passes = f.passes.value_or(3);
  opts.schedule = parse_schedule(i.schedule);
  opts.damping = i.damping;
  opts.validate();
  const EnergyModel model = model_from_checkpoint(read_json_file(i.checkpoint));
  const std::vector<ObservationInstance> data = read_instances(i.instances);
  std::vector<json> rows;
  for (std::size_t n = 0; n < data.size(); ++n) {
    try {
      model.check_compatible(data[n].spec);
    } catch (const Error& e) {
      throw DataError(std::string("instance does not match checkpoint: ") + e.what(), i.instances,
                      static_cast<int>(n) + 1);
    }
    const Marginals q = run_mean_field(build_field(model, data[n]), opts);
    rows.push_back({{"index", n},
                    {"meta", data[n].meta},
                    {"marginals", marginals_to_json(q)},
                    {"labels", assignment_to_json(map_labels(q))}});
  }
  const std::filesystem::path dir = f.out.empty() ? std::filesystem::path("out") : std::filesystem::path(f.out);
  write_text_file(dir / "marginals.jsonl", jsonl(rows));
  out << "inferred " << rows.size() << " instances\n";
  return kExitOk;
}

struct EvalFlags {
  std::string pred;
  std::string gt;
  std::string task = "detect";
  std::string zero_shot;
  bool pooled_map = false;
  bool unlocalized = false;
  std::vector<int> ks;
};

// One sample per (instance, step): predicted and gold labels of every stream.
void recognition_samples(const std::string& pred_path, const std::string& gt_path,
                         std::vector<std::vector<int>>& preds, std::vector<std::vector<int>>& gold) {
  const std::vector<ObservationInstance> truth = read_instances(gt_path);
  std::vector<json> rows;
  {
    std::ifstream in(pred_path);
    if (!in) throw DataError("cannot open file", pred_path);
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        json row = json::parse(line);
        if (!row.contains("labels")) throw DataError("missing field 'labels'", pred_path, no);
        rows.push_back(std::move(row));
      } catch (const json::exception& e) {
        throw DataError(std::string("invalid JSON: ") + e.what(), pred_path, no);
      }
    }
  }
  if (rows.size() != truth.size()) {
    throw DataError("prediction count " + std::to_string(rows.size()) + " differs from ground truth count " +
                    std::to_string(truth.size()), pred_path);
  }
  for (std::size_t n = 0; n < truth.size(); ++n) {
    if (!truth[n].gold) throw DataError("instance has no gold labels", gt_path, static_cast<int>(n) + 1);
    std::vector<std::vector<int>> labels;
    try {
      labels = rows[n].at("labels").get<std::vector<std::vector<int>>>();
    } catch (const json::exception&) {
      throw DataError("field 'labels' has the wrong type", pred_path, static_cast<int>(n) + 1);
    }
    const auto& g = truth[n].gold->labels;
    if (labels.size() != g.size()) throw DataError("label steps differ from ground truth", pred_path, static_cast<int>(n) + 1);
    for (std::size_t t = 0; t < g.size(); ++t) {
      if (labels[t].size() != g[t].size()) throw DataError("label streams differ from ground truth", pred_path, static_cast<int>(n) + 1);
      preds.push_back(labels[t]);
      gold.push_back(g[t]);
    }
  }
}

int cmd_eval(const CommonFlags& f, const EvalFlags& e, std::ostream& out, std::ostream& err) {
  MetricReport report;
  std::optional<std::set<Triplet>> seen;
  if (!e.zero_shot.empty()) seen = read_triplets(e.zero_shot);

  if (e.task == "recognize") {
    std::vector<std::vector<int>> preds, gold;
    recognition_samples(e.pred, e.gt, preds, gold);
    if (seen) {
      std::vector<std::vector<int>> p2, g2;
      for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i].size() != 3) throw DataError("--zero-shot needs three streams per sample", e.gt);
        if (!seen->count(Triplet{gold[i][0], gold[i][1], gold[i][2]})) {
          p2.push_back(preds[i]);
          g2.push_back(gold[i]);
        }
      }
      preds.swap(p2);
      gold.swap(g2);
    }
    report = recognition_metrics(preds, gold);
  } else if (e.task == "detect" || e.task == "tag") {
    const RelationsByVideo preds = read_relations(e.pred);
    RelationsByVideo gt = read_relations(e.gt);
    if (seen) gt = zero_shot_split(*seen, gt);
    if (e.task == "detect") {
      DetectionOptions opts;
      if (!e.ks.empty()) opts.ks = e.ks;
      opts.localized = !e.unlocalized;
      opts.pooled_map = e.pooled_map;
      report = detection_metrics(preds, gt, opts);
    } else {
      report = e.ks.empty() ? tagging_metrics(preds, gt) : tagging_metrics(preds, gt, e.ks);
    }
  } else {
    throw CLI::ValidationError("--task", "must be detect, tag or recognize");
  }
  if (seen && report.warnings.empty() == false) {
    report.warnings.insert(report.warnings.begin(), "zero-shot split is empty: every ground-truth triplet occurs in training");
  }
  for (const std::string& w : report.warnings) err << "warning: " << w << "\n";
  const std::string text = report_to_json(report).dump(2) + "\n";
  if (!f.out.empty()) write_text_file(std::filesystem::path(f.out) / "report.json", text);
  out << text;
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, const std::string& schedule, int cases,
               std::ostream& out) {
  std::vector<SuiteResult> results;
  const bool all = suite == "all";
  if (all || suite == "gradcheck") {
    for (auto& r : verify_gradcheck(seed, cases > 0 ? cases : 20)) results.push_back(r);
  }
  if (all || suite == "freeenergy") {
    results.push_back(verify_free_energy(seed, cases > 0 ? cases : 100, parse_schedule(schedule)));
  }
  if (all || suite == "oracle") {
    for (auto& r : verify_oracle(seed, cases > 0 ? cases : 50)) results.push_back(r);
  }
  if (all || suite == "metrics") {
    for (auto& r : verify_metrics(seed, cases > 0 ? cases : 200)) results.push_back(r);
  }
  bool ok = true;
  for (const SuiteResult& r : results) {
    out << format_result(r) << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitVerify;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j, "config", {"seed", "out", "model", "train", "synth", "data"});
  ExperimentConfig cfg;
  if (!j.contains("seed")) throw DataError("config must set 'seed'");
  cfg.seed = to_seed(j.at("seed"));
  std::string out = cfg.out.string();
  read_opt(j, "out", out, "config");
  cfg.out = out;
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
  cfg.train.seed = cfg.seed;
  if (j.contains("synth")) cfg.synth = synth_split_from_json(j.at("synth"));
  if (j.contains("data")) {
    reject_unknown(j.at("data"), "data", {"train"});
    std::string path;
    read_opt(j.at("data"), "train", path, "data");
    cfg.train_data = path;
  }
  cfg.train.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    ExperimentConfig cfg = experiment_from_json(j);
    if (!cfg.train_data.empty() && cfg.train_data.is_relative()) cfg.train_data = path.parent_path() / cfg.train_data;
    return cfg;
  } catch (const DataError& e) {
    throw DataError(e.what(), path.string());
  } catch (const Error& e) {
    throw DataError(e.what(), path.string());
  }
}

SynthConfig synth_config_for(const ExperimentConfig& cfg) {
  SynthConfig s = cfg.synth->synth;
  s.seed = cfg.seed;
  return s;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gated spatio-temporal energy graph: training, inference, evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonFlags common;
  std::uint64_t seed_value = 0;
  int passes_value = 0;
  auto add_common = [&](CLI::App* sub, bool config) {
    if (config) sub->add_option("--config", common.config, "Experiment JSON file");
    sub->add_option("--seed", seed_value, "Root seed; overrides the config");
    sub->add_option("--out", common.out, "Output directory");
  };
  const std::vector<std::string> modes{"ueg", "seg", "steg", "gsteg"};

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_common(train_cmd, true);
  train_cmd->get_option("--config")->required();
  train_cmd->add_option("--passes", passes_value, "Mean-field passes")->check(CLI::PositiveNumber);
  train_cmd->add_option("--mode", common.mode, "Model family")->check(CLI::IsMember(modes));

  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a planted synthetic train/test split");
  add_common(synth_cmd, true);
  synth_cmd->get_option("--config")->required();

  InferFlags infer;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Mean-field marginals and MAP labels");
  add_common(infer_cmd, false);
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Checkpoint or model JSON")->required();
  infer_cmd->add_option("--instances", infer.instances, "Instances JSONL")->required();
  infer_cmd->add_option("--passes", passes_value, "Mean-field passes")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--schedule", infer.schedule, "sequential or parallel")
      ->check(CLI::IsMember({"sequential", "parallel"}));
  infer_cmd->add_option("--damping", infer.damping, "Parallel-schedule damping");

  EvalFlags evalf;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score predictions against ground truth");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--pred", evalf.pred, "Predictions")->required();
  eval_cmd->add_option("--gt", evalf.gt, "Ground truth")->required();
  eval_cmd->add_option("--task", evalf.task, "detect, tag or recognize")
      ->check(CLI::IsMember({"detect", "tag", "recognize"}));
  eval_cmd->add_option("--zero-shot", evalf.zero_shot, "Training triplets; keep only unseen ones");
  eval_cmd->add_flag("--pooled-map", evalf.pooled_map, "Average precision over one pooled ranking");
  eval_cmd->add_flag("--unlocalized", evalf.unlocalized, "Match detections on triplets only");
  eval_cmd->add_option("--k", evalf.ks, "Cutoffs for R@K or P@K");

  std::string suite = "all";
  std::string verify_schedule = "sequential";
  int cases = 0;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Run an invariant suite");
  verify_cmd->add_option("suite", suite, "oracle, gradcheck, freeenergy, metrics or all")
      ->check(CLI::IsMember({"oracle", "gradcheck", "freeenergy", "metrics", "all"}));
  verify_cmd->add_option("--seed", seed_value, "Suite seed");
  verify_cmd->add_option("--schedule", verify_schedule, "Inference schedule for freeenergy")
      ->check(CLI::IsMember({"sequential", "parallel"}));
  verify_cmd->add_option("--cases", cases, "Cases per suite (0 = default)");

  std::vector<std::string> argv_store{"gsteg"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (std::string& s : argv_store) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  auto seed_flag = [&](CLI::App* sub) {
    if (sub->count("--seed")) common.seed = seed_value;
  };
  try {
    if (train_cmd->parsed()) {
      seed_flag(train_cmd);
      if (train_cmd->count("--passes")) common.passes = passes_value;
      return cmd_train(common, out);
    }
    if (synth_cmd->parsed()) {
      seed_flag(synth_cmd);
      return cmd_synth(common, out);
    }
    if (infer_cmd->parsed()) {
      if (infer_cmd->count("--passes")) common.passes = passes_value;
      return cmd_infer(common, infer, out);
    }
    if (eval_cmd->parsed()) return cmd_eval(common, evalf, out, err);
    if (verify_cmd->parsed()) return cmd_verify(suite, seed_value, verify_schedule, cases, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ModeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace gsteg
