#include "gsteg/graph.hpp"

#include <cmath>
#include <sstream>

namespace gsteg {

void GraphSpec::validate() const {
  if (num_streams < 1) throw SpecError("spec: num_streams must be >= 1");
  if (num_steps < 1) throw SpecError("spec: num_steps must be >= 1");
  if (static_cast<int>(label_sizes.size()) != num_streams) {
    throw SpecError("spec: label_sizes length differs from num_streams");
  }
  if (static_cast<int>(feature_dims.size()) != num_streams) {
    throw SpecError("spec: feature_dims length differs from num_streams");
  }
  for (int k = 0; k < num_streams; ++k) {
    if (label_sizes[k] < 2) throw SpecError("spec: label_sizes[" + std::to_string(k) + "] < 2");
    if (feature_dims[k] < 1) throw SpecError("spec: feature_dims[" + std::to_string(k) + "] < 1");
  }
}

std::vector<ChunkRange> chunk_video(int frame_count, int chunk_len, int stride) {
  if (frame_count < 1 || chunk_len < 1 || stride < 1) {
    throw ChunkError("chunk_video: arguments must be positive");
  }
  if (chunk_len > frame_count) throw ChunkError("video shorter than one chunk");
  if (stride > chunk_len) throw ChunkError("gap between chunks");

  std::vector<ChunkRange> chunks;
  int start = 0;
  for (; start + chunk_len <= frame_count; start += stride) {
    chunks.push_back({start, start + chunk_len});
  }
  if (chunks.back().end_frame < frame_count) {
    chunks.push_back({frame_count - chunk_len, frame_count});
  }
  return chunks;
}

namespace {

std::string at_node(int t, int k) {
  std::ostringstream os;
  os << "(" << t << "," << k << ")";
  return os.str();
}

}  // namespace

void validate_assignment(const GraphSpec& spec, const Assignment& y) {
  if (static_cast<int>(y.labels.size()) != spec.num_steps) {
    throw DimensionMismatch("assignment has wrong number of steps");
  }
  for (int t = 0; t < spec.num_steps; ++t) {
    if (static_cast<int>(y.labels[t].size()) != spec.num_streams) {
      throw DimensionMismatch("assignment has wrong number of streams at step " + std::to_string(t));
    }
    for (int k = 0; k < spec.num_streams; ++k) {
      int label = y.labels[t][k];
      if (label < 0 || label >= spec.label_sizes[k]) {
        throw LabelOutOfRange("label out of range at " + at_node(t, k));
      }
    }
  }
}

const ObservationInstance& validate_instance(const ObservationInstance& inst) {
  const GraphSpec& spec = inst.spec;
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw DimensionMismatch(e.what());
  }
  if (static_cast<int>(inst.features.size()) != spec.num_steps) {
    throw DimensionMismatch("feature array has wrong number of steps");
  }
  for (int t = 0; t < spec.num_steps; ++t) {
    if (static_cast<int>(inst.features[t].size()) != spec.num_streams) {
      throw DimensionMismatch("feature array has wrong number of streams at step " +
                              std::to_string(t));
    }
    for (int k = 0; k < spec.num_streams; ++k) {
      const auto& x = inst.features[t][k];
      if (static_cast<int>(x.size()) != spec.feature_dims[k]) {
        throw DimensionMismatch("feature dim mismatch at " + at_node(t, k));
      }
      for (double v : x) {
        if (!std::isfinite(v)) throw NonFiniteValue("non-finite feature at " + at_node(t, k));
      }
    }
  }
  if (inst.gold) validate_assignment(spec, *inst.gold);
  return inst;
}

std::uint64_t state_space_size(const GraphSpec& spec, std::uint64_t cap) {
  std::uint64_t total = 1;
  for (int t = 0; t < spec.num_steps; ++t) {
    for (int k = 0; k < spec.num_streams; ++k) {
      total *= static_cast<std::uint64_t>(spec.label_sizes[k]);
      if (total > cap) throw CapacityError("oracle state space too large");
    }
  }
  return total;
}

Assignment zero_assignment(const GraphSpec& spec) {
  Assignment y;
  y.labels.assign(spec.num_steps, std::vector<int>(spec.num_streams, 0));
  return y;
}

void for_each_assignment(const GraphSpec& spec, const std::function<void(const Assignment&)>& visit,
                         std::uint64_t cap) {
  spec.validate();
  state_space_size(spec, cap);
  Assignment y = zero_assignment(spec);
  const int n = spec.num_nodes();
  while (true) {
    visit(y);
    int i = n - 1;
    for (; i >= 0; --i) {
      Node node = node_at(spec, i);
      int& label = y.labels[node.t][node.k];
      if (++label < spec.label_sizes[node.k]) break;
      label = 0;
    }
    if (i < 0) return;
  }
}

std::vector<Assignment> enumerate_assignments(const GraphSpec& spec, std::uint64_t cap) {
  std::vector<Assignment> out;
  out.reserve(state_space_size(spec, cap));
  for_each_assignment(spec, [&](const Assignment& y) { out.push_back(y); }, cap);
  return out;
}

}  // namespace gsteg
