#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsteg/energy.hpp"
#include "gsteg/learning.hpp"
#include "gsteg/synth.hpp"

namespace gsteg {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitVerify = 3 };

/// Planted synthetic data: the first `num_train` generated instances train,
/// the next `num_test` evaluate. Both share one planted model.
struct SynthSplit {
  SynthConfig synth;
  int num_train = 100;
  int num_test = 50;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  ModelConfig model;
  TrainConfig train;
  std::optional<SynthSplit> synth;
  std::filesystem::path train_data;  // instances file; used when `synth` is unset
};

/// Parses an experiment document. Unknown keys are rejected.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Synthetic config with the seed replaced by the experiment seed.
SynthConfig synth_config_for(const ExperimentConfig& cfg);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace gsteg
