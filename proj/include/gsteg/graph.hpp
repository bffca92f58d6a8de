#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace gsteg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

// Instance validation failures, one type per broken invariant.
class InvalidInstance : public Error {
 public:
  using Error::Error;
};
class DimensionMismatch : public InvalidInstance {
 public:
  using InvalidInstance::InvalidInstance;
};
class NonFiniteValue : public InvalidInstance {
 public:
  using InvalidInstance::InvalidInstance;
};
class LabelOutOfRange : public InvalidInstance {
 public:
  using InvalidInstance::InvalidInstance;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class ChunkError : public Error {
 public:
  using Error::Error;
};

/// Shape of a spatio-temporal graph: K synchronous streams observed over T
/// steps. Label and feature sizes are fixed per stream.
struct GraphSpec {
  int num_streams = 0;
  int num_steps = 0;
  std::vector<int> label_sizes;
  std::vector<int> feature_dims;

  int num_nodes() const { return num_streams * num_steps; }
  void validate() const;

  bool operator==(const GraphSpec&) const = default;
};

struct Node {
  int t = 0;
  int k = 0;

  auto operator<=>(const Node&) const = default;
};

// Nodes are indexed lexicographically in (t, k).
inline int node_index(const GraphSpec& spec, Node n) {
  return n.t * spec.num_streams + n.k;
}
inline Node node_at(const GraphSpec& spec, int index) {
  return {index / spec.num_streams, index % spec.num_streams};
}

struct Assignment {
  std::vector<std::vector<int>> labels;  // [t][k]

  int at(Node n) const { return labels[n.t][n.k]; }
  bool operator==(const Assignment&) const = default;
};

struct ObservationInstance {
  GraphSpec spec;
  std::vector<std::vector<std::vector<double>>> features;  // [t][k][dim]
  std::optional<Assignment> gold;
  nlohmann::json meta = nlohmann::json::object();

  const std::vector<double>& feature(Node n) const { return features[n.t][n.k]; }
  bool operator==(const ObservationInstance&) const = default;
};

/// Half-open frame window [start_frame, end_frame).
struct ChunkRange {
  int start_frame = 0;
  int end_frame = 0;

  int length() const { return end_frame - start_frame; }
  bool operator==(const ChunkRange&) const = default;
};

/// Splits a video into fixed-length windows `stride` frames apart. When the
/// last stride-aligned window would not reach the end, one extra window is
/// shifted left so that it ends exactly at `frame_count`.
std::vector<ChunkRange> chunk_video(int frame_count, int chunk_len, int stride);

/// Returns the instance unchanged if every shape/finiteness/label invariant
/// holds; otherwise throws the matching InvalidInstance subtype.
const ObservationInstance& validate_instance(const ObservationInstance& inst);

void validate_assignment(const GraphSpec& spec, const Assignment& y);

inline constexpr std::uint64_t kDefaultStateCap = 1'000'000;

/// Number of joint assignments, or throws CapacityError when above `cap`.
std::uint64_t state_space_size(const GraphSpec& spec, std::uint64_t cap = kDefaultStateCap);

/// Visits every joint assignment once, lexicographic in (t, k, label): the
/// last node varies fastest.
void for_each_assignment(const GraphSpec& spec, const std::function<void(const Assignment&)>& visit,
                         std::uint64_t cap = kDefaultStateCap);

std::vector<Assignment> enumerate_assignments(const GraphSpec& spec,
                                              std::uint64_t cap = kDefaultStateCap);

Assignment zero_assignment(const GraphSpec& spec);

}  // namespace gsteg
