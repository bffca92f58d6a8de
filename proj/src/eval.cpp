#include "gsteg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gsteg {

double box_intersection(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

Trajectory::Trajectory(int start_frame, std::vector<Box> boxes) : start_(start_frame), boxes_(std::move(boxes)) {
  if (start_frame < 0) throw InvalidInstance("trajectory: negative start frame");
  for (const Box& b : boxes_) {
    if (!(b.x1 < b.x2 && b.y1 < b.y2)) throw InvalidInstance("trajectory: degenerate box");
  }
}

Trajectory Trajectory::from_frames(const std::vector<std::pair<int, Box>>& frames) {
  if (frames.empty()) return {};
  std::vector<Box> boxes;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].first != frames[0].first + static_cast<int>(i)) {
      throw InvalidInstance("trajectory: frames not contiguous");
    }
    boxes.push_back(frames[i].second);
  }
  return Trajectory(frames[0].first, std::move(boxes));
}

const Box* Trajectory::at(int frame) const {
  if (frame < start_ || frame >= end_frame()) return nullptr;
  return &boxes_[frame - start_];
}

Trajectory Trajectory::slice(int from, int to) const {
  const int lo = std::max(from, start_);
  const int hi = std::min(to, end_frame());
  if (lo >= hi) return {};
  Trajectory out;
  out.start_ = lo;
  out.boxes_.assign(boxes_.begin() + (lo - start_), boxes_.begin() + (hi - start_));
  return out;
}

Trajectory Trajectory::extended_by(const Trajectory& later) const {
  if (empty()) return later;
  Trajectory out = *this;
  for (int f = std::max(end_frame(), later.start_frame()); f < later.end_frame(); ++f) {
    if (f != out.end_frame()) throw InvalidInstance("trajectory: gap between concatenated parts");
    out.boxes_.push_back(*later.at(f));
  }
  return out;
}

double viou(const Trajectory& a, const Trajectory& b) {
  if (a.empty() && b.empty()) return 0.0;
  int lo = std::numeric_limits<int>::max();
  int hi = std::numeric_limits<int>::min();
  for (const Trajectory* t : {&a, &b}) {
    if (t->empty()) continue;
    lo = std::min(lo, t->start_frame());
    hi = std::max(hi, t->end_frame());
  }
  double inter = 0.0;
  double uni = 0.0;
  for (int f = lo; f < hi; ++f) {
    const Box* ba = a.at(f);
    const Box* bb = b.at(f);
    if (ba && bb) {
      const double i = box_intersection(*ba, *bb);
      inter += i;
      uni += ba->area() + bb->area() - i;
    } else if (ba) {
      uni += ba->area();
    } else if (bb) {
      uni += bb->area();
    }
  }
  return uni > 0.0 ? inter / uni : 0.0;
}

// ---------------------------------------------------------------------------

namespace {

struct Track {
  AssociatedRelation assoc;
  double score_sum = 0.0;
  int last_chunk = -1;
};

}  // namespace

std::vector<AssociatedRelation> greedy_associate(const std::vector<ChunkPredictions>& chunks,
                                                 double viou_threshold) {
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    if (chunks[i].span.start_frame <= chunks[i - 1].span.start_frame) {
      throw ChunkError("greedy_associate: chunks are not ordered by start frame");
    }
  }
  std::vector<Track> tracks;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const auto& rels = chunks[c].relations;
    for (const RelationInstance& r : rels) {
      if (!r.subject || !r.object) throw InvalidInstance("greedy_associate: relation without trajectories");
    }
    std::vector<std::size_t> order(rels.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return rels[x].score > rels[y].score; });

    const bool overlaps = c > 0 && chunks[c].span.start_frame < chunks[c - 1].span.end_frame;
    const int ov_lo = chunks[c].span.start_frame;
    const int ov_hi = c > 0 ? chunks[c - 1].span.end_frame : ov_lo;
    std::vector<char> extended(tracks.size(), 0);

    for (std::size_t idx : order) {
      const RelationInstance& r = rels[idx];
      int best = -1;
      double best_overlap = -1.0;
      if (overlaps) {
        for (std::size_t t = 0; t < tracks.size(); ++t) {
          const Track& tr = tracks[t];
          if (extended[t] || tr.last_chunk != static_cast<int>(c) - 1) continue;
          if (tr.assoc.relation.triplet != r.triplet) continue;
          const double vs = viou(tr.assoc.relation.subject->slice(ov_lo, ov_hi), r.subject->slice(ov_lo, ov_hi));
          const double vo = viou(tr.assoc.relation.object->slice(ov_lo, ov_hi), r.object->slice(ov_lo, ov_hi));
          if (vs > viou_threshold && vo > viou_threshold && std::min(vs, vo) > best_overlap) {
            best_overlap = std::min(vs, vo);
            best = static_cast<int>(t);
          }
        }
      }
      if (best >= 0) {
        Track& tr = tracks[best];
        extended[best] = 1;
        RelationInstance& merged = tr.assoc.relation;
        merged.subject = merged.subject->extended_by(*r.subject);
        merged.object = merged.object->extended_by(*r.object);
        merged.span.start_frame = std::min(merged.span.start_frame, r.span.start_frame);
        merged.span.end_frame = std::max(merged.span.end_frame, r.span.end_frame);
        tr.score_sum += r.score;
        tr.assoc.members.emplace_back(static_cast<int>(c), static_cast<int>(idx));
        merged.score = tr.score_sum / static_cast<double>(tr.assoc.members.size());
        tr.last_chunk = static_cast<int>(c);
      } else {
        Track tr;
        tr.assoc.relation = r;
        tr.assoc.members.emplace_back(static_cast<int>(c), static_cast<int>(idx));
        tr.score_sum = r.score;
        tr.last_chunk = static_cast<int>(c);
        tracks.push_back(std::move(tr));
        extended.push_back(1);
      }
    }
  }
  std::vector<AssociatedRelation> out;
  out.reserve(tracks.size());
  for (Track& t : tracks) out.push_back(std::move(t.assoc));
  return out;
}

// ---------------------------------------------------------------------------

double average_precision(const std::vector<bool>& hits, std::size_t num_positives) {
  if (num_positives == 0) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> precision(hits.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Precision envelope: best precision at this rank or any later one.
  for (std::size_t i = hits.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) sum += precision[i];
  }
  return sum / static_cast<double>(num_positives);
}

namespace {

std::vector<std::size_t> rank_by_score(const std::vector<RelationInstance>& rels) {
  std::vector<std::size_t> order(rels.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return rels[x].score > rels[y].score; });
  return order;
}

// Hit flag per ranked prediction after greedy one-to-one matching.
std::vector<bool> match_video(const std::vector<RelationInstance>& ranked_preds,
                              const std::vector<RelationInstance>& gt, const DetectionOptions& opts) {
  std::vector<bool> hits(ranked_preds.size(), false);
  std::vector<char> used(gt.size(), 0);
  for (std::size_t i = 0; i < ranked_preds.size(); ++i) {
    const RelationInstance& p = ranked_preds[i];
    int best = -1;
    double best_overlap = -1.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (used[g] || gt[g].triplet != p.triplet) continue;
      if (!opts.localized) {
        best = static_cast<int>(g);
        break;
      }
      if (!p.subject || !p.object || !gt[g].subject || !gt[g].object) {
        throw InvalidInstance("localized detection needs subject and object trajectories");
      }
      const double vs = viou(*p.subject, *gt[g].subject);
      const double vo = viou(*p.object, *gt[g].object);
      if (vs > opts.viou_threshold && vo > opts.viou_threshold && std::min(vs, vo) > best_overlap) {
        best_overlap = std::min(vs, vo);
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[best] = 1;
      hits[i] = true;
    }
  }
  return hits;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

MetricReport detection_metrics(const RelationsByVideo& preds, const RelationsByVideo& gt,
                               const DetectionOptions& opts) {
  MetricReport report;
  std::map<int, double> recall_sum;
  double ap_sum = 0.0;
  std::size_t videos = 0;
  struct Pooled {
    double score;
    bool hit;
  };
  std::vector<Pooled> pooled;
  std::size_t pooled_positives = 0;

  static const std::vector<RelationInstance> kNone;
  for (const auto& [video, gt_rels] : gt) {
    if (gt_rels.empty()) continue;
    auto it = preds.find(video);
    const auto& video_preds = it == preds.end() ? kNone : it->second;
    std::vector<RelationInstance> ranked;
    for (std::size_t i : rank_by_score(video_preds)) ranked.push_back(video_preds[i]);
    const std::vector<bool> hits = match_video(ranked, gt_rels, opts);

    auto& row = report.per_video[video];
    for (int k : opts.ks) {
      const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
      const auto found = std::count(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top), true);
      const double recall = static_cast<double>(found) / static_cast<double>(gt_rels.size());
      recall_sum[k] += recall;
      row["R@" + std::to_string(k)] = recall;
    }
    const double ap = average_precision(hits, gt_rels.size());
    row["AP"] = ap;
    ap_sum += ap;
    ++videos;
    for (std::size_t i = 0; i < ranked.size(); ++i) pooled.push_back({ranked[i].score, hits[i]});
    pooled_positives += gt_rels.size();
  }

  if (videos == 0) {
    report.warnings.push_back("no ground-truth relations to evaluate; metrics undefined");
    for (int k : opts.ks) report.recall_at[k] = nan();
    report.mean_ap = nan();
    return report;
  }
  for (int k : opts.ks) report.recall_at[k] = recall_sum[k] / static_cast<double>(videos);
  if (opts.pooled_map) {
    std::stable_sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) { return a.score > b.score; });
    std::vector<bool> hits;
    for (const Pooled& p : pooled) hits.push_back(p.hit);
    report.mean_ap = average_precision(hits, pooled_positives);
  } else {
    report.mean_ap = ap_sum / static_cast<double>(videos);
  }
  return report;
}

MetricReport tagging_metrics(const RelationsByVideo& preds, const RelationsByVideo& gt,
                             const std::vector<int>& ks) {
  MetricReport report;
  std::map<int, double> sum;
  std::size_t videos = 0;
  for (const auto& [video, gt_rels] : gt) {
    if (gt_rels.empty()) continue;
    const std::set<Triplet> truth = triplets_of({{video, gt_rels}});

    // Best score per distinct triplet, ranked; ties keep first appearance.
    std::vector<std::pair<Triplet, double>> distinct;
    if (auto it = preds.find(video); it != preds.end()) {
      for (const RelationInstance& r : it->second) {
        auto found = std::find_if(distinct.begin(), distinct.end(),
                                  [&](const auto& d) { return d.first == r.triplet; });
        if (found == distinct.end()) {
          distinct.emplace_back(r.triplet, r.score);
        } else {
          found->second = std::max(found->second, r.score);
        }
      }
    }
    std::stable_sort(distinct.begin(), distinct.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    auto& row = report.per_video[video];
    for (int k : ks) {
      std::size_t correct = 0;
      for (std::size_t i = 0; i < distinct.size() && i < static_cast<std::size_t>(k); ++i) {
        correct += truth.count(distinct[i].first);
      }
      const double p = static_cast<double>(correct) / static_cast<double>(k);
      sum[k] += p;
      row["P@" + std::to_string(k)] = p;
    }
    ++videos;
  }
  if (videos == 0) report.warnings.push_back("no ground-truth relations to evaluate; metrics undefined");
  for (int k : ks) report.precision_at[k] = videos ? sum[k] / static_cast<double>(videos) : nan();
  return report;
}

std::vector<std::string> default_entity_names(std::size_t count) {
  if (count == 3) return {"subject", "predicate", "object"};
  std::vector<std::string> names;
  for (std::size_t k = 0; k < count; ++k) names.push_back("entity" + std::to_string(k));
  return names;
}

MetricReport recognition_metrics(const std::vector<std::vector<int>>& preds,
                                 const std::vector<std::vector<int>>& gold,
                                 const std::vector<std::string>& entity_names) {
  if (preds.size() != gold.size()) throw DimensionMismatch("recognition: prediction/gold count differs");
  MetricReport report;
  if (gold.empty()) {
    report.warnings.push_back("no samples to evaluate; metrics undefined");
    report.acc_at_1["relationship"] = nan();
    return report;
  }
  const std::size_t entities = gold.front().size();
  const std::vector<std::string> names =
      entity_names.empty() ? default_entity_names(entities) : entity_names;
  if (names.size() != entities) throw DimensionMismatch("recognition: wrong number of entity names");

  std::vector<std::size_t> correct(entities, 0);
  std::size_t all_correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (preds[i].size() != entities || gold[i].size() != entities) {
      throw DimensionMismatch("recognition: sample " + std::to_string(i) + " has wrong entity count");
    }
    bool all = true;
    for (std::size_t e = 0; e < entities; ++e) {
      if (preds[i][e] == gold[i][e]) {
        ++correct[e];
      } else {
        all = false;
      }
    }
    if (all) ++all_correct;
  }
  const double n = static_cast<double>(gold.size());
  for (std::size_t e = 0; e < entities; ++e) report.acc_at_1[names[e]] = static_cast<double>(correct[e]) / n;
  report.acc_at_1["relationship"] = static_cast<double>(all_correct) / n;
  return report;
}

std::set<Triplet> triplets_of(const RelationsByVideo& relations) {
  std::set<Triplet> out;
  for (const auto& [video, rels] : relations) {
    for (const RelationInstance& r : rels) out.insert(r.triplet);
  }
  return out;
}

RelationsByVideo zero_shot_split(const std::set<Triplet>& train_triplets, const RelationsByVideo& gt) {
  RelationsByVideo out;
  for (const auto& [video, rels] : gt) {
    std::vector<RelationInstance> kept;
    for (const RelationInstance& r : rels) {
      if (!train_triplets.count(r.triplet)) kept.push_back(r);
    }
    if (!kept.empty()) out.emplace(video, std::move(kept));
  }
  return out;
}

}  // namespace gsteg
