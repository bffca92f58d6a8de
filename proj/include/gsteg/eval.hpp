#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gsteg/graph.hpp"

namespace gsteg {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  bool operator==(const Box&) const = default;
};

double box_intersection(const Box& a, const Box& b);

/// Boxes on a contiguous frame range [start_frame, start_frame + size).
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(int start_frame, std::vector<Box> boxes);

  /// From (frame, box) pairs; frames must be consecutive.
  static Trajectory from_frames(const std::vector<std::pair<int, Box>>& frames);

  int start_frame() const { return start_; }
  int end_frame() const { return start_ + static_cast<int>(boxes_.size()); }
  bool empty() const { return boxes_.empty(); }
  const std::vector<Box>& boxes() const { return boxes_; }
  const Box* at(int frame) const;

  /// Restriction to [from, to); empty if disjoint.
  Trajectory slice(int from, int to) const;
  /// This trajectory followed by the frames of `later` past its end.
  Trajectory extended_by(const Trajectory& later) const;

  bool operator==(const Trajectory&) const = default;

 private:
  int start_ = 0;
  std::vector<Box> boxes_;
};

/// Voluminal IoU: summed per-frame intersection over summed per-frame union,
/// where frames covered by only one trajectory add that box's full area.
double viou(const Trajectory& a, const Trajectory& b);

using Triplet = std::array<int, 3>;

struct RelationInstance {
  Triplet triplet{};
  double score = 0.0;
  ChunkRange span;
  std::optional<Trajectory> subject;
  std::optional<Trajectory> object;
};

struct ChunkPredictions {
  ChunkRange span;
  std::vector<RelationInstance> relations;
};

struct AssociatedRelation {
  RelationInstance relation;
  std::vector<std::pair<int, int>> members;  // (chunk index, index within chunk)
};

/// Links relation instances across overlapping consecutive chunks when their
/// triplets agree and both tracklets overlap with vIoU above the threshold.
std::vector<AssociatedRelation> greedy_associate(const std::vector<ChunkPredictions>& chunks,
                                                 double viou_threshold = 0.5);

using RelationsByVideo = std::map<std::string, std::vector<RelationInstance>>;

struct MetricReport {
  std::map<int, double> recall_at;
  std::map<int, double> precision_at;
  std::optional<double> mean_ap;
  std::map<std::string, double> acc_at_1;
  std::map<std::string, std::map<std::string, double>> per_video;
  std::vector<std::string> warnings;
};

struct DetectionOptions {
  std::vector<int> ks{50, 100};
  double viou_threshold = 0.5;
  bool localized = true;
  bool pooled_map = false;  // one ranking over all videos instead of per-video AP
};

MetricReport detection_metrics(const RelationsByVideo& preds, const RelationsByVideo& gt,
                               const DetectionOptions& opts = {});

/// Average precision of a ranked hit list with max-precision interpolation.
double average_precision(const std::vector<bool>& hits, std::size_t num_positives);

MetricReport tagging_metrics(const RelationsByVideo& preds, const RelationsByVideo& gt,
                             const std::vector<int>& ks = {1, 5, 10});

/// Acc@1 per entity and for the full tuple. `preds[i]` and `gold[i]` hold one
/// label per entity for sample i.
MetricReport recognition_metrics(const std::vector<std::vector<int>>& preds,
                                 const std::vector<std::vector<int>>& gold,
                                 const std::vector<std::string>& entity_names = {});

std::vector<std::string> default_entity_names(std::size_t count);

std::set<Triplet> triplets_of(const RelationsByVideo& relations);

/// Keeps ground-truth relations whose triplet never occurs in training.
RelationsByVideo zero_shot_split(const std::set<Triplet>& train_triplets, const RelationsByVideo& gt);

}  // namespace gsteg
