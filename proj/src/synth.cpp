#include "gsteg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gsteg/random.hpp"

namespace gsteg {

GraphSpec SynthConfig::make_spec(int num_streams, int num_steps, std::vector<int> label_sizes,
                                 int num_contexts) {
  GraphSpec spec;
  spec.num_streams = num_streams;
  spec.num_steps = num_steps;
  spec.label_sizes = std::move(label_sizes);
  for (int size : spec.label_sizes) spec.feature_dims.push_back(size + num_contexts);
  return spec;
}

void SynthConfig::validate() const {
  spec.validate();
  if (num_contexts < 1) throw SpecError("synth: num_contexts must be >= 1");
  if (!(context_strength > 0.0)) throw SpecError("synth: context_strength must be > 0");
  if (!(noise_std >= 0.0)) throw SpecError("synth: noise_std must be >= 0");
  if (num_instances < 1) throw SpecError("synth: num_instances must be >= 1");
  if (!(coupling_strength >= 0.0)) throw SpecError("synth: coupling_strength must be >= 0");
  for (int k = 0; k < spec.num_streams; ++k) {
    if (spec.feature_dims[k] != spec.label_sizes[k] + num_contexts) {
      throw SpecError("synth: feature_dims[k] must equal label_sizes[k] + num_contexts");
    }
  }
  state_space_size(spec);
}

double PlantedModel::energy(int context, const Assignment& y) const {
  const int K = spec.num_streams;
  double e = 0.0;
  for (int t = 0; t < spec.num_steps; ++t) {
    for (int k = 0; k < K; ++k) {
      for (int k2 = k + 1; k2 < K; ++k2) e += spatial[context][k * K + k2](y.labels[t][k], y.labels[t][k2]);
      if (t + 1 < spec.num_steps) e += temporal[context][k](y.labels[t][k], y.labels[t + 1][k]);
    }
  }
  return e;
}

PlantedModel planted_model(const SynthConfig& cfg) {
  cfg.validate();
  const GraphSpec& spec = cfg.spec;
  const int K = spec.num_streams;
  PlantedModel m;
  m.spec = spec;
  m.num_contexts = cfg.num_contexts;
  m.spatial.assign(cfg.num_contexts, std::vector<Matrix>(K * K));
  m.temporal.assign(cfg.num_contexts, std::vector<Matrix>(K));

  Rng rng = substream(cfg.seed, "synth.planted");
  auto draw = [&](int rows, int cols) {
    Matrix x(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) x(i, j) = cfg.coupling_strength * standard_normal(rng);
    }
    // Double-centred: no part of the matrix is expressible as a per-label bias.
    x.colwise() -= x.rowwise().mean();
    x.rowwise() -= x.colwise().mean();
    return x;
  };
  for (int c = 0; c < cfg.num_contexts; ++c) {
    const bool mirrored = cfg.mirror_contexts && cfg.num_contexts == 2 && c == 1;
    for (int k = 0; k < K; ++k) {
      for (int k2 = k + 1; k2 < K; ++k2) {
        m.spatial[c][k * K + k2] = mirrored ? Matrix(-m.spatial[0][k * K + k2])
                                            : draw(spec.label_sizes[k], spec.label_sizes[k2]);
      }
      m.temporal[c][k] = mirrored ? Matrix(-m.temporal[0][k]) : draw(spec.label_sizes[k], spec.label_sizes[k]);
    }
  }
  return m;
}

namespace {

// Every joint state with its per-context log-probability.
struct StateTable {
  std::vector<std::vector<int>> labels;       // [state][node]
  std::vector<std::vector<double>> log_prob;  // [context][state]
};

StateTable enumerate_states(const PlantedModel& m) {
  StateTable table;
  const GraphSpec& spec = m.spec;
  table.log_prob.assign(m.num_contexts, {});
  for_each_assignment(spec, [&](const Assignment& y) {
    std::vector<int> flat(spec.num_nodes());
    for (int a = 0; a < spec.num_nodes(); ++a) flat[a] = y.at(node_at(spec, a));
    table.labels.push_back(std::move(flat));
    for (int c = 0; c < m.num_contexts; ++c) table.log_prob[c].push_back(-m.energy(c, y));
  });
  for (auto& lp : table.log_prob) {
    const double top = *std::max_element(lp.begin(), lp.end());
    double z = 0.0;
    for (double v : lp) z += std::exp(v - top);
    const double log_z = top + std::log(z);
    for (double& v : lp) v -= log_z;
  }
  return table;
}

}  // namespace

std::vector<ObservationInstance> generate_dataset(const SynthConfig& cfg) {
  const PlantedModel planted = planted_model(cfg);
  const StateTable table = enumerate_states(planted);
  const GraphSpec& spec = cfg.spec;

  std::vector<std::vector<double>> cdf(cfg.num_contexts);
  for (int c = 0; c < cfg.num_contexts; ++c) {
    double acc = 0.0;
    for (double lp : table.log_prob[c]) {
      acc += std::exp(lp);
      cdf[c].push_back(acc);
    }
  }

  std::vector<ObservationInstance> out;
  out.reserve(cfg.num_instances);
  for (int i = 0; i < cfg.num_instances; ++i) {
    Rng rng = substream(cfg.seed, "synth", static_cast<std::uint64_t>(i));
    const int c = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.num_contexts)));
    const double u = uniform01(rng) * cdf[c].back();
    auto it = std::upper_bound(cdf[c].begin(), cdf[c].end(), u);
    const std::size_t state = std::min<std::size_t>(it - cdf[c].begin(), cdf[c].size() - 1);

    ObservationInstance inst;
    inst.spec = spec;
    inst.gold = zero_assignment(spec);
    inst.features.assign(spec.num_steps, std::vector<std::vector<double>>(spec.num_streams));
    for (int a = 0; a < spec.num_nodes(); ++a) {
      Node n = node_at(spec, a);
      const int label = table.labels[state][a];
      inst.gold->labels[n.t][n.k] = label;
      std::vector<double>& x = inst.features[n.t][n.k];
      x.assign(spec.feature_dims[n.k], 0.0);
      for (int y = 0; y < spec.label_sizes[n.k]; ++y) {
        x[y] = (y == label ? 1.0 : 0.0) + cfg.noise_std * standard_normal(rng);
      }
      x[spec.label_sizes[n.k] + c] = cfg.context_strength;
    }
    inst.meta = {{"context", c}, {"index", i}};
    out.push_back(std::move(inst));
  }
  return out;
}

double BayesAccuracy::triplet_stderr() const {
  if (samples == 0) return 0.0;
  return std::sqrt(triplet * (1.0 - triplet) / static_cast<double>(samples));
}

BayesAccuracy bayes_accuracy(const SynthConfig& cfg, const std::vector<ObservationInstance>& data) {
  const PlantedModel planted = planted_model(cfg);
  const StateTable table = enumerate_states(planted);
  const GraphSpec& spec = cfg.spec;
  const int K = spec.num_streams;
  const int n = spec.num_nodes();
  const std::size_t num_states = table.labels.size();
  // Exact one-hot features (no noise) make the likelihood a limit; a large
  // finite precision reproduces it.
  const double precision = cfg.noise_std > 0.0 ? 1.0 / (cfg.noise_std * cfg.noise_std) : 1e12;

  BayesAccuracy acc;
  acc.entity.assign(K, 0.0);
  std::vector<double> log_post(num_states * cfg.num_contexts);
  for (const ObservationInstance& inst : data) {
    if (!inst.gold) throw InvalidInstance("bayes_accuracy needs gold labels");
    validate_instance(inst);
    if (!(inst.spec == spec)) throw DimensionMismatch("instance spec differs from synth spec");

    // Contexts compatible with the noiseless context block.
    std::vector<char> ctx_ok(cfg.num_contexts, 1);
    for (int c = 0; c < cfg.num_contexts; ++c) {
      for (int a = 0; a < n && ctx_ok[c]; ++a) {
        Node nd = node_at(spec, a);
        const auto& x = inst.feature(nd);
        for (int j = 0; j < cfg.num_contexts; ++j) {
          const double want = j == c ? cfg.context_strength : 0.0;
          if (std::abs(x[spec.label_sizes[nd.k] + j] - want) > 1e-9) ctx_ok[c] = 0;
        }
      }
    }

    double top = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < cfg.num_contexts; ++c) {
      for (std::size_t s = 0; s < num_states; ++s) {
        double lp = -std::numeric_limits<double>::infinity();
        if (ctx_ok[c]) {
          lp = table.log_prob[c][s];
          for (int a = 0; a < n; ++a) lp += precision * inst.feature(node_at(spec, a))[table.labels[s][a]];
        }
        log_post[c * num_states + s] = lp;
        top = std::max(top, lp);
      }
    }
    if (!std::isfinite(top)) throw InvalidInstance("features match no context");

    // Posterior marginals per node and per step-joint.
    std::vector<Vector> node_marg(n);
    for (int a = 0; a < n; ++a) node_marg[a] = Vector::Zero(spec.label_sizes[node_at(spec, a).k]);
    std::vector<std::vector<double>> step_joint(spec.num_steps);
    std::vector<int> radix(K, 1);
    int joint_size = 1;
    for (int k = K - 1; k >= 0; --k) {
      radix[k] = joint_size;
      joint_size *= spec.label_sizes[k];
    }
    for (auto& j : step_joint) j.assign(joint_size, 0.0);
    for (int c = 0; c < cfg.num_contexts; ++c) {
      for (std::size_t s = 0; s < num_states; ++s) {
        const double p = std::exp(log_post[c * num_states + s] - top);
        if (p == 0.0) continue;
        const auto& labels = table.labels[s];
        for (int a = 0; a < n; ++a) node_marg[a][labels[a]] += p;
        for (int t = 0; t < spec.num_steps; ++t) {
          int idx = 0;
          for (int k = 0; k < K; ++k) idx += labels[t * K + k] * radix[k];
          step_joint[t][idx] += p;
        }
      }
    }

    for (int t = 0; t < spec.num_steps; ++t) {
      int gold_idx = 0;
      for (int k = 0; k < K; ++k) {
        const Vector& m = node_marg[t * K + k];
        int best = 0;
        for (int y = 1; y < m.size(); ++y) {
          if (m[y] > m[best]) best = y;
        }
        const int gold = inst.gold->labels[t][k];
        if (best == gold) acc.entity[k] += 1.0;
        gold_idx += gold * radix[k];
      }
      const auto& joint = step_joint[t];
      const auto best = std::max_element(joint.begin(), joint.end()) - joint.begin();
      if (best == gold_idx) acc.triplet += 1.0;
      ++acc.samples;
    }
  }
  if (acc.samples > 0) {
    for (double& e : acc.entity) e /= static_cast<double>(acc.samples);
    acc.triplet /= static_cast<double>(acc.samples);
  }
  return acc;
}

BayesAccuracy bayes_accuracy(const SynthConfig& cfg) { return bayes_accuracy(cfg, generate_dataset(cfg)); }

}  // namespace gsteg
