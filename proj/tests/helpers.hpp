#pragma once

#include <string>
#include <vector>

#include "gsteg/energy.hpp"
#include "gsteg/graph.hpp"

namespace gsteg::testing {

inline GraphSpec spec_of(int K, int T, std::vector<int> labels, std::vector<int> dims) {
  GraphSpec s;
  s.num_streams = K;
  s.num_steps = T;
  s.label_sizes = std::move(labels);
  s.feature_dims = std::move(dims);
  return s;
}

// Every node gets the same feature vector of stream k.
inline ObservationInstance constant_instance(const GraphSpec& spec, const std::vector<std::vector<double>>& per_stream) {
  ObservationInstance inst;
  inst.spec = spec;
  for (int t = 0; t < spec.num_steps; ++t) inst.features.push_back(per_stream);
  return inst;
}

inline ObservationInstance zero_instance(const GraphSpec& spec) {
  std::vector<std::vector<double>> x;
  for (int d : spec.feature_dims) x.emplace_back(d, 0.0);
  return constant_instance(spec, x);
}

inline void zero_all(EnergyModel& m) {
  for (Tensor& t : m.tensors()) std::fill(t.values.begin(), t.values.end(), 0.0);
}

inline void set(EnergyModel& m, const std::string& name, std::vector<double> values) {
  Tensor& t = m.tensor(name);
  REQUIRE(t.values.size() == values.size());
  t.values = std::move(values);
}

inline Assignment labels(std::vector<std::vector<int>> y) { return Assignment{std::move(y)}; }

}  // namespace gsteg::testing
