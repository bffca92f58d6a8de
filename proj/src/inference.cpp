#include "gsteg/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gsteg {

namespace {

Vector softmax(const Vector& s) {
  Vector e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

int checked_index(const GraphSpec& spec, Node n) {
  if (n.t < 0 || n.t >= spec.num_steps || n.k < 0 || n.k >= spec.num_streams) {
    throw DimensionMismatch("node out of range");
  }
  return node_index(spec, n);
}

}  // namespace

void InferenceOptions::validate() const {
  if (num_passes < 1) throw SpecError("inference: num_passes must be >= 1");
  if (!(damping >= 0.0 && damping < 1.0)) throw SpecError("inference: damping must be in [0, 1)");
  if (!(tolerance >= 0.0)) throw SpecError("inference: tolerance must be >= 0");
}

Marginals init_marginals(const EnergyField& field) {
  Marginals q;
  q.num_streams = field.spec.num_streams;
  q.nodes.reserve(field.unary.size());
  for (const Vector& psi : field.unary) q.nodes.push_back(softmax(-psi));
  return q;
}

Marginals init_marginals(const EnergyModel& model, const ObservationInstance& inst) {
  return init_marginals(build_field(model, inst));
}

Vector compute_message(const EnergyField& field, const Marginals& q, int source, int target) {
  if (source == target) throw ModeError("message needs two distinct nodes");
  if (!field.has_edge(target, source)) {
    throw ModeError(field.has_edge(source, target) ? "missing reverse edge" : "no pairwise edge between nodes");
  }
  return (-(field.couple(target, source) * q.nodes[source])).array().exp();
}

Vector compute_message(const EnergyModel& model, const ObservationInstance& inst, const Marginals& q,
                       Node source, Node target) {
  if (source == target) throw ModeError("message needs two distinct nodes");
  if (model.mode() == Mode::ueg) throw ModeError("no pairwise terms");
  if (model.mode() == Mode::seg && source.t != target.t) {
    throw ModeError("temporal edge in spatial-only mode");
  }
  const EnergyField field = build_field(model, inst);
  return compute_message(field, q, checked_index(inst.spec, source), checked_index(inst.spec, target));
}

Vector node_update(const EnergyField& field, const Marginals& q, int node) {
  const int n = field.num_nodes();
  Vector s = -field.unary[node];
  for (int b = 0; b < n; ++b) {
    if (b != node && field.has_edge(node, b)) s.noalias() -= field.couple(node, b) * q.nodes[b];
  }
  return softmax(s);
}

Marginals mean_field_update_node(const EnergyModel& model, const ObservationInstance& inst,
                                 const Marginals& q, Node node) {
  const EnergyField field = build_field(model, inst);
  Marginals out = q;
  const int a = checked_index(inst.spec, node);
  out.nodes[a] = node_update(field, q, a);
  return out;
}

Marginals run_mean_field(const EnergyField& field, const InferenceOptions& opts, MeanFieldTape* tape) {
  opts.validate();
  const int n = field.num_nodes();
  Marginals q = init_marginals(field);
  if (tape) {
    tape->initial = q;
    tape->steps.clear();
    tape->schedule = opts.schedule;
    tape->damping = opts.schedule == Schedule::parallel ? opts.damping : 0.0;
  }

  for (int pass = 0; pass < opts.num_passes; ++pass) {
    double change = 0.0;
    if (opts.schedule == Schedule::sequential) {
      for (int a = 0; a < n; ++a) {
        Vector update = node_update(field, q, a);
        change = std::max(change, (update - q.nodes[a]).cwiseAbs().maxCoeff());
        if (tape) tape->steps.push_back({a, q.nodes[a], update});
        q.nodes[a] = std::move(update);
      }
    } else {
      std::vector<Vector> next(n);
      for (int a = 0; a < n; ++a) {
        Vector update = node_update(field, q, a);
        next[a] = (1.0 - opts.damping) * update + opts.damping * q.nodes[a];
        if (tape) tape->steps.push_back({a, q.nodes[a], std::move(update)});
      }
      for (int a = 0; a < n; ++a) {
        change = std::max(change, (next[a] - q.nodes[a]).cwiseAbs().maxCoeff());
        q.nodes[a] = std::move(next[a]);
      }
    }
    if (opts.tolerance > 0.0 && change < opts.tolerance) break;
  }
  return q;
}

Marginals run_mean_field(const EnergyModel& model, const ObservationInstance& inst,
                         const InferenceOptions& opts) {
  return run_mean_field(build_field(model, inst), opts);
}

double free_energy(const EnergyField& field, const Marginals& q) {
  const int n = field.num_nodes();
  double f = 0.0;
  for (int a = 0; a < n; ++a) {
    f += q.nodes[a].dot(field.unary[a]);
    for (Eigen::Index y = 0; y < q.nodes[a].size(); ++y) {
      const double p = q.nodes[a][y];
      if (p > 0.0) f += p * std::log(p);
    }
  }
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (field.has_edge(a, b)) f += q.nodes[a].dot(field.phi(a, b) * q.nodes[b]);
    }
  }
  return f;
}

double free_energy(const EnergyModel& model, const ObservationInstance& inst, const Marginals& q) {
  return free_energy(build_field(model, inst), q);
}

GibbsDistribution exact_inference(const EnergyField& field, std::uint64_t cap) {
  const GraphSpec& spec = field.spec;
  const int n = field.num_nodes();
  std::vector<double> energies;
  energies.reserve(state_space_size(spec, cap));

  GibbsDistribution out;
  double best = std::numeric_limits<double>::infinity();
  for_each_assignment(
      spec,
      [&](const Assignment& y) {
        const double e = total_energy(field, y);
        if (e < best) {
          best = e;
          out.map_assignment = y;
        }
        energies.push_back(e);
      },
      cap);

  double z = 0.0;
  for (double e : energies) z += std::exp(best - e);
  out.log_partition = -best + std::log(z);

  out.exact_marginals.num_streams = spec.num_streams;
  for (int a = 0; a < n; ++a) {
    out.exact_marginals.nodes.push_back(Vector::Zero(spec.label_sizes[node_at(spec, a).k]));
  }
  std::size_t i = 0;
  for_each_assignment(
      spec,
      [&](const Assignment& y) {
        const double p = std::exp(best - energies[i++]) / z;
        for (int a = 0; a < n; ++a) {
          Node na = node_at(spec, a);
          out.exact_marginals.nodes[a][y.labels[na.t][na.k]] += p;
        }
      },
      cap);
  return out;
}

GibbsDistribution exact_inference(const EnergyModel& model, const ObservationInstance& inst,
                                  std::uint64_t cap) {
  state_space_size(inst.spec, cap);
  return exact_inference(build_field(model, inst), cap);
}

Assignment map_labels(const Marginals& q) {
  Assignment y;
  const int steps = q.num_steps();
  y.labels.assign(steps, std::vector<int>(q.num_streams, 0));
  for (int t = 0; t < steps; ++t) {
    for (int k = 0; k < q.num_streams; ++k) {
      const Vector& p = q.at({t, k});
      int best = 0;
      for (Eigen::Index i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = static_cast<int>(i);
      }
      y.labels[t][k] = best;
    }
  }
  return y;
}

double fixed_point_residual(const EnergyField& field, const Marginals& q) {
  double worst = 0.0;
  for (int a = 0; a < field.num_nodes(); ++a) {
    worst = std::max(worst, (node_update(field, q, a) - q.nodes[a]).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace gsteg
