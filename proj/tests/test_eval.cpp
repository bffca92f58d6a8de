#include <doctest.h>

#include <cmath>

#include "gsteg/eval.hpp"

using namespace gsteg;

namespace {

Trajectory track(int start, int len, Box b) { return Trajectory(start, std::vector<Box>(len, b)); }

RelationInstance rel(Triplet t, double score, ChunkRange span = {0, 10}, Box s = {0, 0, 10, 10},
                     Box o = {20, 20, 30, 30}) {
  RelationInstance r;
  r.triplet = t;
  r.score = score;
  r.span = span;
  r.subject = track(span.start_frame, span.length(), s);
  r.object = track(span.start_frame, span.length(), o);
  return r;
}

const Triplet A{0, 0, 0}, B{1, 1, 1}, X{2, 2, 2}, C{3, 3, 3};

}  // namespace

TEST_CASE("viou") {
  const Trajectory a = track(0, 3, {0, 0, 10, 10});
  CHECK(viou(a, a) == 1.0);
  CHECK(viou(a, track(0, 3, {20, 20, 30, 30})) == 0.0);
  CHECK(viou(track(4, 1, {0, 0, 10, 10}), track(4, 1, {5, 0, 15, 10})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // Frames covered by one side only count in the union.
  CHECK(viou(track(0, 2, {0, 0, 10, 10}), track(1, 2, {0, 0, 10, 10})) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(viou(track(0, 2, {0, 0, 10, 10}), track(5, 2, {0, 0, 10, 10})) == 0.0);
  CHECK_THROWS_AS(Trajectory(0, {{0, 0, 0, 10}}), InvalidInstance);
  CHECK_THROWS_AS(Trajectory::from_frames({{0, {0, 0, 1, 1}}, {2, {0, 0, 1, 1}}}), InvalidInstance);
}

TEST_CASE("greedy_associate") {
  SUBCASE("identical tracklets merge") {
    std::vector<ChunkPredictions> chunks{{{0, 10}, {rel(A, 0.8, {0, 10})}}, {{5, 15}, {rel(A, 0.4, {5, 15})}}};
    const auto out = greedy_associate(chunks);
    REQUIRE(out.size() == 1);
    CHECK(out[0].relation.span == ChunkRange{0, 15});
    CHECK(out[0].relation.subject->start_frame() == 0);
    CHECK(out[0].relation.subject->end_frame() == 15);
    CHECK(out[0].relation.score == doctest::Approx(0.6));
    CHECK(out[0].members.size() == 2);
  }
  SUBCASE("low overlap stays separate") {
    // Subject boxes overlap with IoU 0.3 on the shared frames.
    const double w = 10.0 * (1 - 0.3) / (1 + 0.3);
    std::vector<ChunkPredictions> chunks{{{0, 10}, {rel(A, 0.8, {0, 10})}},
                                         {{5, 15}, {rel(A, 0.4, {5, 15}, {w, 0, 10 + w, 10})}}};
    CHECK(viou(track(5, 5, {0, 0, 10, 10}), track(5, 5, {w, 0, 10 + w, 10})) == doctest::Approx(0.3));
    CHECK(greedy_associate(chunks).size() == 2);
  }
  SUBCASE("different triplets stay separate") {
    std::vector<ChunkPredictions> chunks{{{0, 10}, {rel(A, 0.8, {0, 10})}}, {{5, 15}, {rel(B, 0.4, {5, 15})}}};
    CHECK(greedy_associate(chunks).size() == 2);
  }
  SUBCASE("chains across three chunks") {
    std::vector<ChunkPredictions> chunks{{{0, 10}, {rel(A, 0.9, {0, 10})}},
                                         {{5, 15}, {rel(A, 0.6, {5, 15})}},
                                         {{10, 20}, {rel(A, 0.3, {10, 20})}}};
    const auto out = greedy_associate(chunks);
    REQUIRE(out.size() == 1);
    CHECK(out[0].relation.span == ChunkRange{0, 20});
    CHECK(out[0].relation.object->end_frame() == 20);
    CHECK(out[0].relation.score == doctest::Approx(0.6));
  }
  SUBCASE("unordered chunks") {
    std::vector<ChunkPredictions> chunks{{{5, 15}, {}}, {{0, 10}, {}}};
    CHECK_THROWS_AS(greedy_associate(chunks), ChunkError);
  }
}

TEST_CASE("detection metrics") {
  SUBCASE("perfect predictions") {
    RelationsByVideo gt{{"v", {rel(A, 1), rel(B, 1)}}};
    const MetricReport r = detection_metrics(gt, gt);
    CHECK(r.recall_at.at(50) == 1.0);
    CHECK(r.recall_at.at(100) == 1.0);
    CHECK(*r.mean_ap == 1.0);
  }
  SUBCASE("hand precision-recall") {
    RelationsByVideo gt{{"v", {rel(A, 1), rel(B, 1)}}};
    RelationsByVideo preds{{"v", {rel(X, 0.5), rel(B, 0.2), rel(A, 0.9)}}};
    DetectionOptions opts;
    opts.ks = {2, 50};
    const MetricReport r = detection_metrics(preds, gt, opts);
    CHECK(r.recall_at.at(2) == 0.5);
    CHECK(r.recall_at.at(50) == 1.0);
    CHECK(*r.mean_ap == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(average_precision({true, false, true}, 2) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  }
  SUBCASE("nothing correct") {
    RelationsByVideo gt{{"v", {rel(A, 1)}}};
    RelationsByVideo preds{{"v", {rel(B, 0.9), rel(A, 0.5, {0, 10}, {50, 50, 60, 60})}}};
    const MetricReport r = detection_metrics(preds, gt);
    CHECK(r.recall_at.at(50) == 0.0);
    CHECK(*r.mean_ap == 0.0);
    DetectionOptions tagging_like;
    tagging_like.localized = false;
    CHECK(detection_metrics(preds, gt, tagging_like).recall_at.at(50) == 1.0);
  }
  SUBCASE("one prediction matches one ground truth") {
    RelationsByVideo gt{{"v", {rel(A, 1), rel(A, 1)}}};
    RelationsByVideo preds{{"v", {rel(A, 0.9)}}};
    CHECK(detection_metrics(preds, gt).recall_at.at(50) == 0.5);
  }
  SUBCASE("per-video and pooled averages") {
    RelationsByVideo gt{{"v1", {rel(A, 1)}}, {"v2", {rel(B, 1)}}};
    RelationsByVideo preds{{"v1", {rel(A, 0.1)}}, {"v2", {rel(X, 0.9), rel(B, 0.8)}}};
    DetectionOptions opts;
    const MetricReport per_video = detection_metrics(preds, gt, opts);
    CHECK(*per_video.mean_ap == doctest::Approx((1.0 + 0.5) / 2));
    CHECK(per_video.per_video.at("v2").at("AP") == doctest::Approx(0.5));
    opts.pooled_map = true;
    // Pooled ranking X, B, A: precision 1/2 at recall 1/2 lifts to 2/3 under the envelope.
    CHECK(*detection_metrics(preds, gt, opts).mean_ap == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("tagging metrics") {
  RelationsByVideo gt{{"v", {rel(A, 1), rel(B, 1), rel(C, 1), rel(Triplet{4, 4, 4}, 1)}}};
  SUBCASE("top-1 correct") {
    RelationsByVideo preds{{"v", {rel(A, 0.9), rel(X, 0.5)}}};
    CHECK(tagging_metrics(preds, gt).precision_at.at(1) == 1.0);
  }
  SUBCASE("four of five correct") {
    RelationsByVideo preds{{"v", {rel(A, 0.9), rel(X, 0.8), rel(B, 0.7), rel(C, 0.6), rel(Triplet{4, 4, 4}, 0.5),
                                  rel(Triplet{5, 5, 5}, 0.1)}}};
    CHECK(tagging_metrics(preds, gt).precision_at.at(5) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("duplicates collapse and the denominator stays K") {
    RelationsByVideo preds{{"v", {rel(A, 0.9), rel(A, 0.95), rel(B, 0.1)}}};
    const MetricReport r = tagging_metrics(preds, gt);
    CHECK(r.precision_at.at(5) == doctest::Approx(0.4));
    CHECK(r.precision_at.at(10) == doctest::Approx(0.2));
  }
}

TEST_CASE("recognition metrics") {
  const std::vector<std::vector<int>> gold{{0, 1, 2}, {1, 1, 1}, {2, 0, 1}, {0, 0, 0}};
  SUBCASE("all correct") {
    const MetricReport r = recognition_metrics(gold, gold);
    for (const char* e : {"subject", "predicate", "object", "relationship"}) CHECK(r.acc_at_1.at(e) == 1.0);
  }
  SUBCASE("subject right, predicate wrong") {
    auto preds = gold;
    for (auto& p : preds) p[1] = (p[1] + 1) % 3;
    const MetricReport r = recognition_metrics(preds, gold);
    CHECK(r.acc_at_1.at("subject") == 1.0);
    CHECK(r.acc_at_1.at("predicate") == 0.0);
    CHECK(r.acc_at_1.at("relationship") == 0.0);
  }
  SUBCASE("counting") {
    const std::vector<std::vector<int>> preds{{0, 1, 2}, {1, 1, 1}, {2, 2, 2}, {1, 0, 0}};
    const MetricReport r = recognition_metrics(preds, gold);
    CHECK(r.acc_at_1.at("relationship") == 0.5);
    CHECK(r.acc_at_1.at("subject") == 0.75);
  }
  SUBCASE("mismatched sizes") {
    CHECK_THROWS_AS(recognition_metrics({{0, 1, 2}}, gold), DimensionMismatch);
  }
}

TEST_CASE("zero-shot split") {
  RelationsByVideo gt{{"v1", {rel(A, 1), rel(B, 1)}}, {"v2", {rel(A, 1)}}};
  const RelationsByVideo zs = zero_shot_split({A}, gt);
  CHECK(triplets_of(zs) == std::set<Triplet>{B});
  CHECK(zs.count("v2") == 0);

  const RelationsByVideo none = zero_shot_split({A, B}, gt);
  CHECK(none.empty());
  const MetricReport r = detection_metrics(gt, none);
  CHECK(std::isnan(r.recall_at.at(50)));
  CHECK(std::isnan(*r.mean_ap));
  CHECK_FALSE(r.warnings.empty());
  CHECK(std::isnan(tagging_metrics(gt, none).precision_at.at(1)));
}

TEST_CASE("zero-shot count arithmetic") {
  const int objects = 35, predicates = 132;
  CHECK(objects * predicates * objects == 161700);
  const double pct = 100.0 * 258 / 1011;
  CHECK(std::abs(pct - 25.5) <= 0.2);
}
