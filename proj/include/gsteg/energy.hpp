#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gsteg/graph.hpp"
#include "gsteg/random.hpp"

namespace gsteg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Model family. UEG: unary only. SEG: non-gated spatial pairs. STEG:
/// non-gated spatial and kernel-discounted temporal pairs. GSTEG: pairwise
/// energies produced by low-rank projections of the source node's features.
enum class Mode { ueg, seg, steg, gsteg };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

/// How the two ordered-pair energies on an edge enter the message into a node.
/// `symmetric` uses both phi_ab and phi_ba (exact coordinate descent on the
/// free energy); `source_gated` uses phi_ab only.
enum class MessageRule { symmetric, source_gated };

std::string_view to_string(MessageRule rule);
MessageRule parse_message_rule(std::string_view name);

class ModeError : public Error {
 public:
  using Error::Error;
};

struct ModelConfig {
  Mode mode = Mode::gsteg;
  int rank = 2;
  double bandwidth = 10.0;
  // Hidden widths of every pairwise projection (ReLU between layers). Empty
  // means a single affine map.
  std::vector<int> hidden;
  // Multiplies every ordered-pair energy; 0.5 halves the double-counted sum.
  double pairwise_scale = 1.0;
  MessageRule message_rule = MessageRule::symmetric;
  // Fixed label embedding table per stream (|Y^k| x d). Non-empty enables the
  // prior term u(S^k[y]) * v(S^k'[y']) on every pairwise edge.
  std::vector<Matrix> label_embeddings;

  bool has_prior() const { return !label_embeddings.empty(); }
};

struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;  // row-major
};

struct AffineLayer {
  int weight = -1;  // tensor index, shape [out, in]
  int bias = -1;    // tensor index, shape [out]
  int in = 0;
  int out = 0;
};

struct Projection {
  std::vector<AffineLayer> layers;

  bool empty() const { return layers.empty(); }
  int in_dim() const { return layers.front().in; }
  int out_dim() const { return layers.back().out; }
};

struct ProjectionTrace {
  std::vector<Vector> inputs;  // input of every layer
  std::vector<Vector> masks;   // dropout scale per hidden layer; empty when off
};

struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;
};

class EnergyModel {
 public:
  /// Fresh model. Affine weights ~ U[-a, a], a = sqrt(6 / (fan_in + fan_out));
  /// biases and compatibility matrices start at zero.
  static EnergyModel create(GraphSpec spec, ModelConfig config, std::uint64_t seed);

  /// Rebuilds a model from stored tensors, checking names and shapes.
  static EnergyModel from_tensors(GraphSpec spec, ModelConfig config, std::vector<Tensor> tensors);

  const GraphSpec& spec() const { return spec_; }
  const ModelConfig& config() const { return config_; }
  Mode mode() const { return config_.mode; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t num_parameters() const;

  const Projection& unary(int k) const { return unary_[k]; }
  const Projection& spatial_row(int k, int k2) const { return spatial_row_[pair(k, k2)]; }
  const Projection& spatial_col(int k, int k2) const { return spatial_col_[pair(k, k2)]; }
  const Projection& temporal_row(int k, int k2) const { return temporal_row_[pair(k, k2)]; }
  const Projection& temporal_col(int k, int k2) const { return temporal_col_[pair(k, k2)]; }
  int compatibility(int k, int k2) const { return compat_[pair(k, k2)]; }
  const Projection& prior_row() const { return prior_row_; }
  const Projection& prior_col() const { return prior_col_; }

  bool has_spatial_edges() const { return config_.mode != Mode::ueg; }
  bool has_temporal_edges() const {
    return config_.mode == Mode::steg || config_.mode == Mode::gsteg;
  }
  bool has_edge(Node a, Node b) const;

  /// Throws DimensionMismatch unless streams, label sizes and feature dims
  /// agree. The number of steps may differ: parameters are shared over time.
  void check_compatible(const GraphSpec& other) const;

  Tensor& tensor(std::string_view name);
  const Tensor& tensor(std::string_view name) const;

 private:
  EnergyModel() = default;
  void build_layout(bool allocate);
  Projection add_projection(const std::string& name, int in, int out, bool allocate);
  int add_tensor(const std::string& name, std::vector<int> shape, bool allocate);
  int pair(int k, int k2) const { return k * spec_.num_streams + k2; }

  GraphSpec spec_;
  ModelConfig config_;
  std::vector<Tensor> tensors_;
  std::vector<Projection> unary_;
  std::vector<Projection> spatial_row_, spatial_col_, temporal_row_, temporal_col_;
  std::vector<int> compat_;
  Projection prior_row_, prior_col_;
};

/// One array per model tensor, shape-matched.
struct GradientBundle {
  std::vector<std::vector<double>> values;

  static GradientBundle zeros_like(const EnergyModel& model);
  double squared_norm() const;
  void add(const GradientBundle& other, double scale = 1.0);
  void scale(double factor);
};

Vector project(const EnergyModel& model, const Projection& proj, std::span<const double> x,
               ProjectionTrace* trace = nullptr, const Dropout* dropout = nullptr);

/// Accumulates d(output)/d(params) * grad_out into `grads`; returns the
/// gradient with respect to the projection input.
Vector project_backward(const EnergyModel& model, const Projection& proj,
                        const ProjectionTrace& trace, const Vector& grad_out,
                        GradientBundle& grads);

Vector unary_energy(const EnergyModel& model, const ObservationInstance& inst, Node node);

/// exp(-(t - t2)^2 / (2 sigma^2)).
double temporal_kernel(int t, int t2, double bandwidth);

/// Transition matrix phi_{source,target}(y, y') of shape |Y^k| x |Y^k'|,
/// gated by the source node's features. Excludes `pairwise_scale`.
Matrix pairwise_transition(const EnergyModel& model, const ObservationInstance& inst, Node source,
                           Node target);

/// Unary plus ordered-pair energy of a full assignment.
double total_energy(const EnergyModel& model, const ObservationInstance& inst, const Assignment& y);

// ---------------------------------------------------------------------------
// Precomputed potentials for one instance; inference and learning run on this.

struct EnergyField {
  GraphSpec spec;
  MessageRule rule = MessageRule::symmetric;
  std::vector<Vector> unary;        // psi per node
  std::vector<Matrix> transition;   // [a * N + b]: scaled phi_ab; empty when no edge
  std::vector<Matrix> coupling;     // [a * N + b]: matrix applied to q_b in the message into a

  int num_nodes() const { return static_cast<int>(unary.size()); }
  bool has_edge(int a, int b) const { return transition[a * num_nodes() + b].size() != 0; }
  const Matrix& phi(int a, int b) const { return transition[a * num_nodes() + b]; }
  const Matrix& couple(int a, int b) const { return coupling[a * num_nodes() + b]; }
};

struct FactorTrace {
  Matrix row;  // |Y^k| x r
  Matrix col;  // |Y^k'| x r
  ProjectionTrace row_trace, col_trace;
};

struct FieldTrace {
  std::vector<ProjectionTrace> unary;  // per node
  std::vector<FactorTrace> spatial;    // [a * K + k2]
  std::vector<FactorTrace> temporal;   // [a * K + k2]
  std::vector<Vector> prior_row, prior_col;  // per stream, one score per label
  std::vector<std::vector<ProjectionTrace>> prior_row_trace, prior_col_trace;
};

EnergyField build_field(const EnergyModel& model, const ObservationInstance& inst,
                        FieldTrace* trace = nullptr, const Dropout* dropout = nullptr);

double total_energy(const EnergyField& field, const Assignment& y);

/// Gradient of a scalar with respect to the coupling matrices, mapped onto the
/// scaled transition matrices.
std::vector<Matrix> coupling_to_transition_grad(const EnergyField& field,
                                                const std::vector<Matrix>& d_coupling);

/// Back-propagates gradients of the field (unary vectors and scaled
/// transitions) into model parameters.
void backprop_field(const EnergyModel& model, const ObservationInstance& inst,
                    const FieldTrace& trace, const std::vector<Vector>& d_unary,
                    const std::vector<Matrix>& d_transition, GradientBundle& grads);

}  // namespace gsteg
