#pragma once

#include <cstdint>
#include <vector>

#include "gsteg/energy.hpp"
#include "gsteg/graph.hpp"

namespace gsteg {

/// Product-form approximate posterior: one categorical per node, stored in
/// node order (t, k).
struct Marginals {
  int num_streams = 0;
  std::vector<Vector> nodes;

  int num_steps() const { return num_streams == 0 ? 0 : static_cast<int>(nodes.size()) / num_streams; }
  const Vector& at(Node n) const { return nodes[n.t * num_streams + n.k]; }
  Vector& at(Node n) { return nodes[n.t * num_streams + n.k]; }
};

enum class Schedule { sequential, parallel };

struct InferenceOptions {
  int num_passes = 3;
  Schedule schedule = Schedule::sequential;
  double damping = 0.5;     // parallel schedule only; in [0, 1)
  double tolerance = 0.0;   // > 0 enables early stop on max-abs change

  void validate() const;
};

/// Every node visit of a mean-field run, enough to replay it backwards.
struct MeanFieldTape {
  struct Step {
    int node = 0;
    Vector before;   // q_node before the visit
    Vector update;   // normalized update (before damping)
  };
  Marginals initial;
  // Sequential: one step per visit. Parallel: passes of N steps, all computed
  // from the iterate preceding the pass.
  std::vector<Step> steps;
  Schedule schedule = Schedule::sequential;
  double damping = 0.0;
};

Marginals init_marginals(const EnergyField& field);
Marginals init_marginals(const EnergyModel& model, const ObservationInstance& inst);

/// Message from `source` into `target`: exp(-C q_source), where C is the
/// coupling between the two nodes.
Vector compute_message(const EnergyField& field, const Marginals& q, int source, int target);
Vector compute_message(const EnergyModel& model, const ObservationInstance& inst, const Marginals& q,
                       Node source, Node target);

/// Normalized update of one node from the current marginals of all others.
Vector node_update(const EnergyField& field, const Marginals& q, int node);

Marginals mean_field_update_node(const EnergyModel& model, const ObservationInstance& inst,
                                 const Marginals& q, Node node);

Marginals run_mean_field(const EnergyField& field, const InferenceOptions& opts,
                         MeanFieldTape* tape = nullptr);
Marginals run_mean_field(const EnergyModel& model, const ObservationInstance& inst,
                         const InferenceOptions& opts);

/// Expected energy minus entropy; equals KL(Q || P) - log Z.
double free_energy(const EnergyField& field, const Marginals& q);
double free_energy(const EnergyModel& model, const ObservationInstance& inst, const Marginals& q);

struct GibbsDistribution {
  double log_partition = 0.0;
  Marginals exact_marginals;
  Assignment map_assignment;
};

GibbsDistribution exact_inference(const EnergyField& field, std::uint64_t cap = kDefaultStateCap);
GibbsDistribution exact_inference(const EnergyModel& model, const ObservationInstance& inst,
                                  std::uint64_t cap = kDefaultStateCap);

/// Per-node argmax; ties go to the smallest label.
Assignment map_labels(const Marginals& q);

/// Largest |q - recomputed update| over all nodes and labels.
double fixed_point_residual(const EnergyField& field, const Marginals& q);

}  // namespace gsteg
