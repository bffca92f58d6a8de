#include "gsteg/learning.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace gsteg {

std::string_view to_string(Optimizer opt) {
  return opt == Optimizer::sgd_momentum ? "sgd_momentum" : "adaptive_moment";
}

Optimizer parse_optimizer(std::string_view name) {
  if (name == "sgd_momentum" || name == "sgd") return Optimizer::sgd_momentum;
  if (name == "adaptive_moment" || name == "adam") return Optimizer::adaptive_moment;
  throw SpecError("unknown optimizer '" + std::string(name) + "'");
}

TrainConfig TrainConfig::imagenet_defaults() {
  TrainConfig cfg;
  cfg.optimizer = Optimizer::adaptive_moment;
  cfg.learning_rate = 0.001;
  cfg.batch_size = 32;
  cfg.epochs = 30;
  cfg.inference.num_passes = 3;
  return cfg;
}

TrainConfig TrainConfig::charades_defaults() {
  TrainConfig cfg;
  cfg.optimizer = Optimizer::sgd_momentum;
  cfg.learning_rate = 0.005;
  cfg.batch_size = 40;
  cfg.epochs = 5;
  cfg.inference.num_passes = 5;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw SpecError("train: learning_rate must be finite and >= 0");
  }
  if (batch_size < 1) throw SpecError("train: batch_size must be >= 1");
  if (epochs < 1) throw SpecError("train: epochs must be >= 1");
  if (gradient_clip && !(*gradient_clip > 0.0)) throw SpecError("train: gradient_clip must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw SpecError("train: dropout must be in [0, 1)");
  inference.validate();
}

namespace {

const Assignment& gold_of(const ObservationInstance& inst) {
  if (!inst.gold) throw InvalidInstance("gold labels missing");
  return *inst.gold;
}

double nll(const Marginals& q, const GraphSpec& spec, const Assignment& gold) {
  double total = 0.0;
  for (int a = 0; a < spec.num_nodes(); ++a) {
    Node n = node_at(spec, a);
    total -= std::log(q.nodes[a][gold.at(n)]);
  }
  return total;
}

// d(loss)/d(s) for q = softmax(s), given d(loss)/d(q).
Vector softmax_backward(const Vector& q, const Vector& grad_q) {
  return q.cwiseProduct(grad_q.array().matrix() - Vector::Constant(q.size(), grad_q.dot(q)));
}

}  // namespace

double loss(const EnergyModel& model, const ObservationInstance& inst, const InferenceOptions& opts) {
  const Assignment& gold = gold_of(inst);
  const EnergyField field = build_field(model, inst);
  return nll(run_mean_field(field, opts), inst.spec, gold);
}

LossGradient gradients(const EnergyModel& model, const ObservationInstance& inst,
                       const InferenceOptions& opts, const Dropout* dropout) {
  const Assignment& gold = gold_of(inst);
  const GraphSpec& spec = inst.spec;
  const int n = spec.num_nodes();

  FieldTrace trace;
  const EnergyField field = build_field(model, inst, &trace, dropout);
  MeanFieldTape tape;
  Marginals q = run_mean_field(field, opts, &tape);

  LossGradient out;
  out.loss = nll(q, spec, gold);

  std::vector<Vector> g_q(n);
  std::vector<Vector> d_unary(n);
  for (int a = 0; a < n; ++a) {
    g_q[a] = Vector::Zero(q.nodes[a].size());
    d_unary[a] = Vector::Zero(q.nodes[a].size());
    const int y = gold.at(node_at(spec, a));
    g_q[a][y] = -1.0 / q.nodes[a][y];
  }
  std::vector<Matrix> d_coupling(static_cast<std::size_t>(n) * n);
  auto accumulate_coupling = [&](int a, int b, const Vector& g_s, const Vector& q_b) {
    Matrix& dc = d_coupling[a * n + b];
    if (dc.size() == 0) dc = Matrix::Zero(g_s.size(), q_b.size());
    dc.noalias() -= g_s * q_b.transpose();
  };

  if (tape.schedule == Schedule::sequential) {
    for (auto it = tape.steps.rbegin(); it != tape.steps.rend(); ++it) {
      const int a = it->node;
      const Vector g_s = softmax_backward(it->update, g_q[a]);
      g_q[a].setZero();
      d_unary[a] -= g_s;
      for (int b = 0; b < n; ++b) {
        if (b == a || !field.has_edge(a, b)) continue;
        accumulate_coupling(a, b, g_s, q.nodes[b]);
        g_q[b].noalias() -= field.couple(a, b).transpose() * g_s;
      }
      q.nodes[a] = it->before;
    }
  } else {
    const double d = tape.damping;
    const std::size_t passes = tape.steps.size() / n;
    for (std::size_t p = passes; p-- > 0;) {
      const auto* steps = &tape.steps[p * n];
      std::vector<Vector> g_old(n);
      for (int a = 0; a < n; ++a) g_old[a] = d * g_q[a];
      for (int a = 0; a < n; ++a) {
        const Vector g_s = softmax_backward(steps[a].update, (1.0 - d) * g_q[a]);
        d_unary[a] -= g_s;
        for (int b = 0; b < n; ++b) {
          if (b == a || !field.has_edge(a, b)) continue;
          accumulate_coupling(a, b, g_s, steps[b].before);
          g_old[b].noalias() -= field.couple(a, b).transpose() * g_s;
        }
      }
      g_q = std::move(g_old);
      for (int a = 0; a < n; ++a) q.nodes[a] = steps[a].before;
    }
  }

  // q now equals the initial softmax(-psi).
  for (int a = 0; a < n; ++a) d_unary[a] -= softmax_backward(tape.initial.nodes[a], g_q[a]);

  out.grads = GradientBundle::zeros_like(model);
  backprop_field(model, inst, trace, d_unary, coupling_to_transition_grad(field, d_coupling), out.grads);

  for (std::size_t i = 0; i < out.grads.values.size(); ++i) {
    for (double v : out.grads.values[i]) {
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite gradient in tensor '" + model.tensors()[i].name + "'");
      }
    }
  }
  return out;
}

double finite_diff_check(const EnergyModel& model, const ObservationInstance& inst,
                         const InferenceOptions& opts, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw SpecError("finite_diff_check: epsilon must be in [1e-7, 1e-3]");
  }
  const LossGradient analytic = gradients(model, inst, opts);
  EnergyModel probe = model;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.tensors().size(); ++i) {
    auto& values = probe.tensors()[i].values;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + epsilon;
      const double up = loss(probe, inst, opts);
      values[j] = saved - epsilon;
      const double down = loss(probe, inst, opts);
      values[j] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic.grads.values[i][j];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
    }
  }
  return worst;
}

void apply_update(EnergyModel& model, const GradientBundle& grads, OptimizerState& state,
                  double learning_rate) {
  auto& tensors = model.tensors();
  if (state.first.values.empty()) state.first = GradientBundle::zeros_like(model);
  if (state.kind == Optimizer::adaptive_moment && state.second.values.empty()) {
    state.second = GradientBundle::zeros_like(model);
  }
  ++state.step;
  if (state.kind == Optimizer::sgd_momentum) {
    constexpr double momentum = 0.9;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& v = state.first.values[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum * v[j] + grads.values[i][j];
        tensors[i].values[j] -= learning_rate * v[j];
      }
    }
    return;
  }
  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& m = state.first.values[i];
    auto& v = state.second.values[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double g = grads.values[i][j];
      m[j] = beta1 * m[j] + (1.0 - beta1) * g;
      v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
      tensors[i].values[j] -= learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
    }
  }
}

TrainResult train(EnergyModel model, const std::vector<ObservationInstance>& dataset,
                  const TrainConfig& cfg, const TrainLogger& log) {
  cfg.validate();
  if (dataset.empty()) throw TrainingError("empty training set");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset[i].gold) throw TrainingError("instance " + std::to_string(i) + " has no gold labels");
    model.check_compatible(dataset[i].spec);
  }

  OptimizerState state;
  state.kind = cfg.optimizer;
  std::vector<double> epoch_loss;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = substream(cfg.seed, "shuffle");
  Rng dropout_rng = substream(cfg.seed, "dropout");
  Dropout dropout{cfg.dropout, &dropout_rng};
  const Dropout* dropout_ptr = cfg.dropout > 0.0 ? &dropout : nullptr;

  int batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      GradientBundle batch_grad = GradientBundle::zeros_like(model);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        LossGradient lg = gradients(model, dataset[order[i]], cfg.inference, dropout_ptr);
        batch_loss += lg.loss;
        batch_grad.add(lg.grads);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("non-finite loss at batch " + std::to_string(batch_index));
      }
      epoch_total += batch_loss;
      const double count = static_cast<double>(end - start);
      batch_grad.scale(1.0 / count);
      double norm = std::sqrt(batch_grad.squared_norm());
      if (cfg.gradient_clip && norm > *cfg.gradient_clip) {
        batch_grad.scale(*cfg.gradient_clip / norm);
      }
      apply_update(model, batch_grad, state, cfg.learning_rate);
      if (log) {
        const auto t1 = std::chrono::steady_clock::now();
        log({epoch, batch_index, batch_loss / count, norm,
             std::chrono::duration<double, std::milli>(t1 - t0).count()});
      }
    }
    epoch_loss.push_back(epoch_total / static_cast<double>(dataset.size()));
  }
  return TrainResult{std::move(model), std::move(epoch_loss), std::move(state)};
}

}  // namespace gsteg
