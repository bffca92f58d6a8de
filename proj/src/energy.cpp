#include "gsteg/energy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace gsteg {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorMatrix> weight_map(const Tensor& w) {
  return {w.values.data(), w.shape[0], w.shape[1]};
}

Eigen::Map<RowMajorMatrix> weight_map(std::vector<double>& w, int out, int in) {
  return {w.data(), out, in};
}

// Row-major flat vector (y * r + j) viewed as a |Y| x r matrix.
Matrix unflatten(const Vector& v, int rows, int cols) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = v[i * cols + j];
  }
  return m;
}

Vector flatten(const Matrix& m) {
  Vector v(m.size());
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) v[i * m.cols() + j] = m(i, j);
  }
  return v;
}

std::span<const double> as_span(const std::vector<double>& x) { return {x.data(), x.size()}; }

std::string pair_name(const char* prefix, int k, int k2) {
  return std::string(prefix) + "." + std::to_string(k) + "." + std::to_string(k2);
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::ueg: return "ueg";
    case Mode::seg: return "seg";
    case Mode::steg: return "steg";
    case Mode::gsteg: return "gsteg";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ueg") return Mode::ueg;
  if (lower == "seg") return Mode::seg;
  if (lower == "steg") return Mode::steg;
  if (lower == "gsteg") return Mode::gsteg;
  throw ModeError("unknown mode '" + std::string(name) + "'");
}

std::string_view to_string(MessageRule rule) {
  return rule == MessageRule::symmetric ? "symmetric" : "source_gated";
}

MessageRule parse_message_rule(std::string_view name) {
  if (name == "symmetric") return MessageRule::symmetric;
  if (name == "source_gated") return MessageRule::source_gated;
  throw ModeError("unknown message rule '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// EnergyModel layout

int EnergyModel::add_tensor(const std::string& name, std::vector<int> shape, bool allocate) {
  Tensor t;
  t.name = name;
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  t.shape = std::move(shape);
  if (allocate) t.values.assign(n, 0.0);
  tensors_.push_back(std::move(t));
  return static_cast<int>(tensors_.size()) - 1;
}

Projection EnergyModel::add_projection(const std::string& name, int in, int out, bool allocate) {
  Projection p;
  std::vector<int> widths{in};
  widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
  widths.push_back(out);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    AffineLayer layer;
    layer.in = widths[i];
    layer.out = widths[i + 1];
    layer.weight = add_tensor(name + ".w" + std::to_string(i), {layer.out, layer.in}, allocate);
    layer.bias = add_tensor(name + ".b" + std::to_string(i), {layer.out}, allocate);
    p.layers.push_back(layer);
  }
  return p;
}

void EnergyModel::build_layout(bool allocate) {
  const int K = spec_.num_streams;
  const int r = config_.rank;
  tensors_.clear();
  unary_.assign(K, {});
  spatial_row_.assign(K * K, {});
  spatial_col_.assign(K * K, {});
  temporal_row_.assign(K * K, {});
  temporal_col_.assign(K * K, {});
  compat_.assign(K * K, -1);
  prior_row_ = {};
  prior_col_ = {};

  // The unary map is always a single affine layer.
  for (int k = 0; k < K; ++k) {
    Projection p;
    AffineLayer layer;
    layer.in = spec_.feature_dims[k];
    layer.out = spec_.label_sizes[k];
    layer.weight = add_tensor("unary." + std::to_string(k) + ".w0", {layer.out, layer.in}, allocate);
    layer.bias = add_tensor("unary." + std::to_string(k) + ".b0", {layer.out}, allocate);
    p.layers.push_back(layer);
    unary_[k] = p;
  }

  const Mode mode = config_.mode;
  if (mode == Mode::gsteg) {
    for (int k = 0; k < K; ++k) {
      for (int k2 = 0; k2 < K; ++k2) {
        const int in = spec_.feature_dims[k];
        if (k != k2) {
          spatial_row_[pair(k, k2)] = add_projection(pair_name("g", k, k2), in, spec_.label_sizes[k] * r, allocate);
          spatial_col_[pair(k, k2)] = add_projection(pair_name("h", k, k2), in, spec_.label_sizes[k2] * r, allocate);
        }
        temporal_row_[pair(k, k2)] = add_projection(pair_name("r", k, k2), in, spec_.label_sizes[k] * r, allocate);
        temporal_col_[pair(k, k2)] = add_projection(pair_name("s", k, k2), in, spec_.label_sizes[k2] * r, allocate);
      }
    }
  } else if (mode == Mode::seg || mode == Mode::steg) {
    for (int k = 0; k < K; ++k) {
      for (int k2 = 0; k2 < K; ++k2) {
        if (k == k2 && mode == Mode::seg) continue;
        compat_[pair(k, k2)] =
            add_tensor(pair_name("mu", k, k2), {spec_.label_sizes[k], spec_.label_sizes[k2]}, allocate);
      }
    }
  }

  if (config_.has_prior() && mode != Mode::ueg) {
    const int d = static_cast<int>(config_.label_embeddings.front().cols());
    prior_row_ = add_projection("prior_u", d, 1, allocate);
    prior_col_ = add_projection("prior_v", d, 1, allocate);
  }
}

namespace {

void check_config(const GraphSpec& spec, const ModelConfig& config) {
  spec.validate();
  if (!(config.bandwidth > 0.0) || !std::isfinite(config.bandwidth)) {
    throw SpecError("model: bandwidth must be positive");
  }
  if (!std::isfinite(config.pairwise_scale)) throw SpecError("model: pairwise_scale must be finite");
  for (int h : config.hidden) {
    if (h < 1) throw SpecError("model: hidden widths must be positive");
  }
  if (config.mode == Mode::gsteg) {
    const int min_labels = *std::min_element(spec.label_sizes.begin(), spec.label_sizes.end());
    if (config.rank < 1 || config.rank >= min_labels) {
      throw SpecError("model: rank must satisfy 1 <= r < min label size (" +
                      std::to_string(min_labels) + ")");
    }
  }
  if (config.has_prior()) {
    if (static_cast<int>(config.label_embeddings.size()) != spec.num_streams) {
      throw SpecError("model: one label embedding table per stream required");
    }
    const auto d = config.label_embeddings.front().cols();
    if (d < 1) throw SpecError("model: empty label embeddings");
    for (int k = 0; k < spec.num_streams; ++k) {
      const Matrix& s = config.label_embeddings[k];
      if (s.rows() != spec.label_sizes[k] || s.cols() != d) {
        throw SpecError("model: label embedding table " + std::to_string(k) + " has wrong shape");
      }
      if (!s.allFinite()) throw SpecError("model: non-finite label embedding");
    }
  }
}

}  // namespace

EnergyModel EnergyModel::create(GraphSpec spec, ModelConfig config, std::uint64_t seed) {
  check_config(spec, config);
  EnergyModel m;
  m.spec_ = std::move(spec);
  m.config_ = std::move(config);
  m.build_layout(true);

  Rng rng = substream(seed, "init");
  for (Tensor& t : m.tensors_) {
    if (t.shape.size() != 2 || t.name.rfind("mu.", 0) == 0) continue;
    const double a = std::sqrt(6.0 / (t.shape[0] + t.shape[1]));
    for (double& v : t.values) v = uniform(rng, -a, a);
  }
  return m;
}

EnergyModel EnergyModel::from_tensors(GraphSpec spec, ModelConfig config, std::vector<Tensor> tensors) {
  check_config(spec, config);
  EnergyModel m;
  m.spec_ = std::move(spec);
  m.config_ = std::move(config);
  m.build_layout(true);
  if (tensors.size() != m.tensors_.size()) {
    throw SpecError("model: expected " + std::to_string(m.tensors_.size()) + " tensors, got " +
                    std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor& want = m.tensors_[i];
    Tensor& got = tensors[i];
    if (got.name != want.name || got.shape != want.shape || got.values.size() != want.values.size()) {
      throw SpecError("model: tensor '" + got.name + "' does not match expected '" + want.name + "'");
    }
    for (double v : got.values) {
      if (!std::isfinite(v)) throw SpecError("model: non-finite value in tensor '" + got.name + "'");
    }
  }
  m.tensors_ = std::move(tensors);
  return m;
}

std::size_t EnergyModel::num_parameters() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.values.size();
  return n;
}

bool EnergyModel::has_edge(Node a, Node b) const {
  if (a == b) return false;
  return a.t == b.t ? has_spatial_edges() : has_temporal_edges();
}

void EnergyModel::check_compatible(const GraphSpec& other) const {
  if (other.num_streams != spec_.num_streams || other.label_sizes != spec_.label_sizes ||
      other.feature_dims != spec_.feature_dims) {
    throw DimensionMismatch("instance spec does not match model spec");
  }
}

Tensor& EnergyModel::tensor(std::string_view name) {
  for (Tensor& t : tensors_) {
    if (t.name == name) return t;
  }
  throw SpecError("model: no tensor named '" + std::string(name) + "'");
}

const Tensor& EnergyModel::tensor(std::string_view name) const {
  return const_cast<EnergyModel*>(this)->tensor(name);
}

// ---------------------------------------------------------------------------
// GradientBundle

GradientBundle GradientBundle::zeros_like(const EnergyModel& model) {
  GradientBundle g;
  g.values.reserve(model.tensors().size());
  for (const Tensor& t : model.tensors()) g.values.emplace_back(t.values.size(), 0.0);
  return g;
}

double GradientBundle::squared_norm() const {
  double s = 0.0;
  for (const auto& v : values) {
    for (double x : v) s += x * x;
  }
  return s;
}

void GradientBundle::add(const GradientBundle& other, double scale) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < values[i].size(); ++j) values[i][j] += scale * other.values[i][j];
  }
}

void GradientBundle::scale(double factor) {
  for (auto& v : values) {
    for (double& x : v) x *= factor;
  }
}

// ---------------------------------------------------------------------------
// Projections

Vector project(const EnergyModel& model, const Projection& proj, std::span<const double> x,
               ProjectionTrace* trace, const Dropout* dropout) {
  Vector h = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  if (trace) {
    trace->inputs.clear();
    trace->masks.clear();
  }
  const auto& tensors = model.tensors();
  for (std::size_t i = 0; i < proj.layers.size(); ++i) {
    const AffineLayer& layer = proj.layers[i];
    if (trace) trace->inputs.push_back(h);
    const Tensor& b = tensors[layer.bias];
    Vector out = weight_map(tensors[layer.weight]) * h +
                 Eigen::Map<const Vector>(b.values.data(), layer.out);
    if (i + 1 < proj.layers.size()) {
      out = out.cwiseMax(0.0);
      if (dropout && dropout->rate > 0.0) {
        Vector mask(out.size());
        const double keep = 1.0 - dropout->rate;
        for (Eigen::Index j = 0; j < mask.size(); ++j) {
          mask[j] = uniform01(*dropout->rng) < keep ? 1.0 / keep : 0.0;
        }
        out = out.cwiseProduct(mask);
        if (trace) trace->masks.push_back(std::move(mask));
      }
    }
    h = std::move(out);
  }
  return h;
}

Vector project_backward(const EnergyModel& model, const Projection& proj,
                        const ProjectionTrace& trace, const Vector& grad_out,
                        GradientBundle& grads) {
  Vector g = grad_out;
  const auto& tensors = model.tensors();
  for (int i = static_cast<int>(proj.layers.size()) - 1; i >= 0; --i) {
    const AffineLayer& layer = proj.layers[i];
    const Vector& input = trace.inputs[i];
    auto dw = weight_map(grads.values[layer.weight], layer.out, layer.in);
    dw.noalias() += g * input.transpose();
    Eigen::Map<Vector>(grads.values[layer.bias].data(), layer.out) += g;
    Vector g_in = weight_map(tensors[layer.weight]).transpose() * g;
    if (i > 0) {
      const bool masked = !trace.masks.empty();
      for (Eigen::Index j = 0; j < g_in.size(); ++j) {
        if (input[j] <= 0.0) {
          g_in[j] = 0.0;
        } else if (masked) {
          g_in[j] *= trace.masks[i - 1][j];
        }
      }
    }
    g = std::move(g_in);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Energies

Vector unary_energy(const EnergyModel& model, const ObservationInstance& inst, Node node) {
  model.check_compatible(inst.spec);
  if (node.t < 0 || node.t >= inst.spec.num_steps || node.k < 0 || node.k >= inst.spec.num_streams) {
    throw DimensionMismatch("node out of range");
  }
  return project(model, model.unary(node.k), as_span(inst.feature(node)));
}

double temporal_kernel(int t, int t2, double bandwidth) {
  if (!(bandwidth > 0.0)) throw SpecError("temporal_kernel: bandwidth must be positive");
  const double dt = static_cast<double>(t - t2);
  return std::exp(-(dt * dt) / (2.0 * bandwidth * bandwidth));
}

namespace {

Vector prior_scores(const EnergyModel& model, const Projection& proj, int k,
                    std::vector<ProjectionTrace>* traces, const Dropout* dropout) {
  const Matrix& table = model.config().label_embeddings[k];
  Vector scores(table.rows());
  if (traces) traces->resize(table.rows());
  for (Eigen::Index y = 0; y < table.rows(); ++y) {
    Vector row = table.row(y).transpose();
    scores[y] = project(model, proj, {row.data(), static_cast<std::size_t>(row.size())},
                        traces ? &(*traces)[y] : nullptr, dropout)[0];
  }
  return scores;
}

bool uses_prior(const EnergyModel& model) {
  return model.config().has_prior() && model.mode() != Mode::ueg;
}

}  // namespace

Matrix pairwise_transition(const EnergyModel& model, const ObservationInstance& inst, Node source,
                           Node target) {
  model.check_compatible(inst.spec);
  if (source == target) throw ModeError("pairwise term needs two distinct nodes");
  if (model.mode() == Mode::ueg) throw ModeError("no pairwise terms");
  if (model.mode() == Mode::seg && source.t != target.t) {
    throw ModeError("temporal edge in spatial-only mode");
  }
  const GraphSpec& spec = model.spec();
  const int k = source.k;
  const int k2 = target.k;
  const int r = model.config().rank;
  const auto x = as_span(inst.feature(source));

  Matrix phi;
  if (model.mode() == Mode::gsteg) {
    if (source.t == target.t) {
      Matrix g = unflatten(project(model, model.spatial_row(k, k2), x), spec.label_sizes[k], r);
      Matrix h = unflatten(project(model, model.spatial_col(k, k2), x), spec.label_sizes[k2], r);
      phi = g * h.transpose();
    } else {
      Matrix rr = unflatten(project(model, model.temporal_row(k, k2), x), spec.label_sizes[k], r);
      Matrix ss = unflatten(project(model, model.temporal_col(k, k2), x), spec.label_sizes[k2], r);
      phi = temporal_kernel(source.t, target.t, model.config().bandwidth) * (rr * ss.transpose());
    }
  } else {
    const Tensor& mu = model.tensors()[model.compatibility(k, k2)];
    phi = weight_map(mu);
    if (source.t != target.t) phi *= temporal_kernel(source.t, target.t, model.config().bandwidth);
  }
  if (uses_prior(model)) {
    Vector u = prior_scores(model, model.prior_row(), k, nullptr, nullptr);
    Vector v = prior_scores(model, model.prior_col(), k2, nullptr, nullptr);
    phi += u * v.transpose();
  }
  return phi;
}

double total_energy(const EnergyModel& model, const ObservationInstance& inst, const Assignment& y) {
  validate_assignment(inst.spec, y);
  return total_energy(build_field(model, inst), y);
}

double total_energy(const EnergyField& field, const Assignment& y) {
  const GraphSpec& spec = field.spec;
  const int n = field.num_nodes();
  std::vector<int> labels(n);
  for (int a = 0; a < n; ++a) labels[a] = y.at(node_at(spec, a));
  double e = 0.0;
  for (int a = 0; a < n; ++a) e += field.unary[a][labels[a]];
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (field.has_edge(a, b)) e += field.phi(a, b)(labels[a], labels[b]);
    }
  }
  return e;
}

// ---------------------------------------------------------------------------
// Field construction and its backward pass

EnergyField build_field(const EnergyModel& model, const ObservationInstance& inst,
                        FieldTrace* trace, const Dropout* dropout) {
  model.check_compatible(inst.spec);
  const GraphSpec& spec = inst.spec;
  const int K = spec.num_streams;
  const int n = spec.num_nodes();
  const int r = model.config().rank;
  const double scale = model.config().pairwise_scale;

  EnergyField field;
  field.spec = spec;
  field.rule = model.config().message_rule;
  field.unary.resize(n);
  field.transition.assign(static_cast<std::size_t>(n) * n, Matrix());
  field.coupling.assign(static_cast<std::size_t>(n) * n, Matrix());

  if (trace) {
    *trace = FieldTrace{};
    trace->unary.resize(n);
  }
  for (int a = 0; a < n; ++a) {
    Node na = node_at(spec, a);
    field.unary[a] = project(model, model.unary(na.k), as_span(inst.feature(na)),
                             trace ? &trace->unary[a] : nullptr, dropout);
  }
  if (model.mode() == Mode::ueg) return field;

  // Low-rank factors, one per (source node, target stream).
  std::vector<FactorTrace> spatial, temporal;
  if (model.mode() == Mode::gsteg) {
    spatial.resize(static_cast<std::size_t>(n) * K);
    temporal.resize(static_cast<std::size_t>(n) * K);
    for (int a = 0; a < n; ++a) {
      Node na = node_at(spec, a);
      const auto x = as_span(inst.feature(na));
      for (int k2 = 0; k2 < K; ++k2) {
        if (k2 != na.k && K > 1) {
          FactorTrace& f = spatial[a * K + k2];
          f.row = unflatten(project(model, model.spatial_row(na.k, k2), x, &f.row_trace, dropout),
                            spec.label_sizes[na.k], r);
          f.col = unflatten(project(model, model.spatial_col(na.k, k2), x, &f.col_trace, dropout),
                            spec.label_sizes[k2], r);
        }
        if (spec.num_steps > 1) {
          FactorTrace& f = temporal[a * K + k2];
          f.row = unflatten(project(model, model.temporal_row(na.k, k2), x, &f.row_trace, dropout),
                            spec.label_sizes[na.k], r);
          f.col = unflatten(project(model, model.temporal_col(na.k, k2), x, &f.col_trace, dropout),
                            spec.label_sizes[k2], r);
        }
      }
    }
  }

  std::vector<Vector> prior_row, prior_col;
  std::vector<std::vector<ProjectionTrace>> prior_row_trace(K), prior_col_trace(K);
  if (uses_prior(model)) {
    for (int k = 0; k < K; ++k) {
      prior_row.push_back(prior_scores(model, model.prior_row(), k, &prior_row_trace[k], dropout));
      prior_col.push_back(prior_scores(model, model.prior_col(), k, &prior_col_trace[k], dropout));
    }
  }

  for (int a = 0; a < n; ++a) {
    Node na = node_at(spec, a);
    for (int b = 0; b < n; ++b) {
      Node nb = node_at(spec, b);
      if (!model.has_edge(na, nb)) continue;
      Matrix phi;
      if (model.mode() == Mode::gsteg) {
        if (na.t == nb.t) {
          const FactorTrace& f = spatial[a * K + nb.k];
          phi = f.row * f.col.transpose();
        } else {
          const FactorTrace& f = temporal[a * K + nb.k];
          phi = temporal_kernel(na.t, nb.t, model.config().bandwidth) * (f.row * f.col.transpose());
        }
      } else {
        phi = weight_map(model.tensors()[model.compatibility(na.k, nb.k)]);
        if (na.t != nb.t) phi *= temporal_kernel(na.t, nb.t, model.config().bandwidth);
      }
      if (!prior_row.empty()) phi += prior_row[na.k] * prior_col[nb.k].transpose();
      field.transition[a * n + b] = scale * phi;
    }
  }

  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (!field.has_edge(a, b)) continue;
      Matrix c = field.phi(a, b);
      if (field.rule == MessageRule::symmetric) c += field.phi(b, a).transpose();
      field.coupling[a * n + b] = std::move(c);
    }
  }

  if (trace) {
    trace->spatial = std::move(spatial);
    trace->temporal = std::move(temporal);
    trace->prior_row = std::move(prior_row);
    trace->prior_col = std::move(prior_col);
    trace->prior_row_trace = std::move(prior_row_trace);
    trace->prior_col_trace = std::move(prior_col_trace);
  }
  return field;
}

std::vector<Matrix> coupling_to_transition_grad(const EnergyField& field,
                                                const std::vector<Matrix>& d_coupling) {
  const int n = field.num_nodes();
  std::vector<Matrix> d_transition(static_cast<std::size_t>(n) * n);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (field.has_edge(a, b)) d_transition[a * n + b] = Matrix::Zero(field.phi(a, b).rows(), field.phi(a, b).cols());
    }
  }
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const Matrix& d = d_coupling[a * n + b];
      if (d.size() == 0) continue;
      d_transition[a * n + b] += d;
      if (field.rule == MessageRule::symmetric) d_transition[b * n + a] += d.transpose();
    }
  }
  return d_transition;
}

void backprop_field(const EnergyModel& model, const ObservationInstance& inst,
                    const FieldTrace& trace, const std::vector<Vector>& d_unary,
                    const std::vector<Matrix>& d_transition, GradientBundle& grads) {
  const GraphSpec& spec = inst.spec;
  const int K = spec.num_streams;
  const int n = spec.num_nodes();
  const double scale = model.config().pairwise_scale;

  for (int a = 0; a < n; ++a) {
    project_backward(model, model.unary(node_at(spec, a).k), trace.unary[a], d_unary[a], grads);
  }
  if (model.mode() == Mode::ueg) return;

  const bool gated = model.mode() == Mode::gsteg;
  std::vector<Matrix> d_srow, d_scol, d_trow, d_tcol;
  if (gated) {
    d_srow.resize(static_cast<std::size_t>(n) * K);
    d_scol.resize(d_srow.size());
    d_trow.resize(d_srow.size());
    d_tcol.resize(d_srow.size());
    for (std::size_t i = 0; i < d_srow.size(); ++i) {
      if (trace.spatial[i].row.size() != 0) {
        d_srow[i] = Matrix::Zero(trace.spatial[i].row.rows(), trace.spatial[i].row.cols());
        d_scol[i] = Matrix::Zero(trace.spatial[i].col.rows(), trace.spatial[i].col.cols());
      }
      if (trace.temporal[i].row.size() != 0) {
        d_trow[i] = Matrix::Zero(trace.temporal[i].row.rows(), trace.temporal[i].row.cols());
        d_tcol[i] = Matrix::Zero(trace.temporal[i].col.rows(), trace.temporal[i].col.cols());
      }
    }
  }
  const bool prior = !trace.prior_row.empty();
  std::vector<Vector> d_prior_row, d_prior_col;
  if (prior) {
    for (int k = 0; k < K; ++k) {
      d_prior_row.push_back(Vector::Zero(spec.label_sizes[k]));
      d_prior_col.push_back(Vector::Zero(spec.label_sizes[k]));
    }
  }

  for (int a = 0; a < n; ++a) {
    Node na = node_at(spec, a);
    for (int b = 0; b < n; ++b) {
      const Matrix& dt = d_transition[a * n + b];
      if (dt.size() == 0) continue;
      Node nb = node_at(spec, b);
      const Matrix d = scale * dt;
      if (gated) {
        const int i = a * K + nb.k;
        if (na.t == nb.t) {
          const FactorTrace& f = trace.spatial[i];
          d_srow[i].noalias() += d * f.col;
          d_scol[i].noalias() += d.transpose() * f.row;
        } else {
          const FactorTrace& f = trace.temporal[i];
          const double kappa = temporal_kernel(na.t, nb.t, model.config().bandwidth);
          d_trow[i].noalias() += kappa * (d * f.col);
          d_tcol[i].noalias() += kappa * (d.transpose() * f.row);
        }
      } else {
        const Tensor& mu = model.tensors()[model.compatibility(na.k, nb.k)];
        auto dmu = weight_map(grads.values[model.compatibility(na.k, nb.k)], mu.shape[0], mu.shape[1]);
        const double kappa =
            na.t == nb.t ? 1.0 : temporal_kernel(na.t, nb.t, model.config().bandwidth);
        dmu += kappa * d;
      }
      if (prior) {
        d_prior_row[na.k] += d * trace.prior_col[nb.k];
        d_prior_col[nb.k] += d.transpose() * trace.prior_row[na.k];
      }
    }
  }

  if (gated) {
    for (int a = 0; a < n; ++a) {
      const int k = node_at(spec, a).k;
      for (int k2 = 0; k2 < K; ++k2) {
        const int i = a * K + k2;
        if (d_srow[i].size() != 0) {
          project_backward(model, model.spatial_row(k, k2), trace.spatial[i].row_trace, flatten(d_srow[i]), grads);
          project_backward(model, model.spatial_col(k, k2), trace.spatial[i].col_trace, flatten(d_scol[i]), grads);
        }
        if (d_trow[i].size() != 0) {
          project_backward(model, model.temporal_row(k, k2), trace.temporal[i].row_trace, flatten(d_trow[i]), grads);
          project_backward(model, model.temporal_col(k, k2), trace.temporal[i].col_trace, flatten(d_tcol[i]), grads);
        }
      }
    }
  }

  if (prior) {
    Vector one(1);
    for (int k = 0; k < K; ++k) {
      for (int y = 0; y < spec.label_sizes[k]; ++y) {
        one[0] = d_prior_row[k][y];
        project_backward(model, model.prior_row(), trace.prior_row_trace[k][y], one, grads);
        one[0] = d_prior_col[k][y];
        project_backward(model, model.prior_col(), trace.prior_col_trace[k][y], one, grads);
      }
    }
  }
}

}  // namespace gsteg
