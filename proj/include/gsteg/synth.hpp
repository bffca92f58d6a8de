#pragma once

#include <cstdint>
#include <vector>

#include "gsteg/energy.hpp"
#include "gsteg/graph.hpp"

namespace gsteg {

/// Generator for instances whose label dependencies switch with a hidden
/// context that is readable from the features.
struct SynthConfig {
  GraphSpec spec;  // feature_dims[k] must be label_sizes[k] + num_contexts
  int num_contexts = 2;
  double context_strength = 2.0;  // beta: scale of the context one-hot
  double noise_std = 0.5;         // Gaussian noise on the label one-hot
  int num_instances = 100;
  std::uint64_t seed = 0;
  double coupling_strength = 2.0;  // std of planted entries before row/column centring
  // With two contexts, the second context uses the negated matrices of the
  // first, so a context-blind transition table averages to nothing.
  bool mirror_contexts = true;

  static GraphSpec make_spec(int num_streams, int num_steps, std::vector<int> label_sizes,
                             int num_contexts);
  void validate() const;
};

/// Per-context Gibbs model the labels are drawn from: spatial matrices on
/// each stream pair k < k' within a step, and a transition matrix per stream
/// between consecutive steps.
struct PlantedModel {
  GraphSpec spec;
  int num_contexts = 0;
  std::vector<std::vector<Matrix>> spatial;   // [c][k * K + k2], k < k2
  std::vector<std::vector<Matrix>> temporal;  // [c][k]

  double energy(int context, const Assignment& y) const;
};

PlantedModel planted_model(const SynthConfig& cfg);

std::vector<ObservationInstance> generate_dataset(const SynthConfig& cfg);

struct BayesAccuracy {
  std::vector<double> entity;  // per stream
  double triplet = 0.0;        // all streams of a step correct
  std::size_t samples = 0;     // number of (instance, step) pairs

  // Binomial standard error of the triplet accuracy.
  double triplet_stderr() const;
};

/// Accuracy of the exact posterior argmax under the generating model,
/// evaluated on `data` (instances produced from `cfg`).
BayesAccuracy bayes_accuracy(const SynthConfig& cfg, const std::vector<ObservationInstance>& data);
BayesAccuracy bayes_accuracy(const SynthConfig& cfg);

}  // namespace gsteg
