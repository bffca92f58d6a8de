#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "gsteg/energy.hpp"
#include "gsteg/inference.hpp"

namespace gsteg {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class Optimizer { sgd_momentum, adaptive_moment };

std::string_view to_string(Optimizer opt);
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::adaptive_moment;
  double learning_rate = 0.001;
  int batch_size = 32;
  int epochs = 30;
  InferenceOptions inference;
  std::uint64_t seed = 0;
  std::optional<double> gradient_clip;  // global-norm clip
  double dropout = 0.0;                 // hidden-layer dropout, training only

  // Adam, lr 1e-3, batch 32, 30 epochs, 3 passes.
  static TrainConfig imagenet_defaults();
  // SGD, lr 5e-3, batch 40, 5 epochs, 5 passes.
  static TrainConfig charades_defaults();

  void validate() const;
};

struct LossGradient {
  double loss = 0.0;
  GradientBundle grads;
};

/// -sum_{t,k} log q[t][k][gold] after the configured mean-field passes.
double loss(const EnergyModel& model, const ObservationInstance& inst, const InferenceOptions& opts);

/// Loss and its exact gradient, differentiating through every unrolled
/// mean-field update back to the parameters.
LossGradient gradients(const EnergyModel& model, const ObservationInstance& inst,
                       const InferenceOptions& opts, const Dropout* dropout = nullptr);

/// Max over all scalar parameters of |a - n| / max(1e-8, |a| + |n|), where n
/// is the central difference with step `epsilon`.
double finite_diff_check(const EnergyModel& model, const ObservationInstance& inst,
                         const InferenceOptions& opts, double epsilon);

struct OptimizerState {
  Optimizer kind = Optimizer::adaptive_moment;
  std::int64_t step = 0;
  GradientBundle first;   // momentum buffer / Adam first moment
  GradientBundle second;  // Adam second moment (empty for SGD)
};

struct TrainLogRecord {
  int epoch = 0;
  int batch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  EnergyModel model;
  std::vector<double> epoch_loss;  // mean per-instance loss seen during each epoch
  OptimizerState state;
};

using TrainLogger = std::function<void(const TrainLogRecord&)>;

TrainResult train(EnergyModel model, const std::vector<ObservationInstance>& dataset,
                  const TrainConfig& cfg, const TrainLogger& log = {});

/// Applies one optimizer update to `model` in place.
void apply_update(EnergyModel& model, const GradientBundle& grads, OptimizerState& state,
                  double learning_rate);

}  // namespace gsteg
