#include "gsteg/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "gsteg/learning.hpp"
#include "gsteg/random.hpp"

namespace gsteg {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

SuiteResult finish(SuiteResult r, Clock::time_point start) {
  r.passed = r.worst <= r.threshold && std::isfinite(r.worst);
  r.seconds = seconds_since(start);
  return r;
}

}  // namespace

std::string format_result(const SuiteResult& r) {
  char buf[256];
  const char* status = r.skipped ? "SKIP" : (r.passed ? "PASS" : "FAIL");
  std::snprintf(buf, sizeof(buf), "%s %-28s worst=%.3e bound=%.1e cases=%d time=%.2fs", status,
                r.name.c_str(), r.worst, r.threshold, r.cases, r.seconds);
  std::string out = buf;
  if (!r.detail.empty()) out += "  (" + r.detail + ")";
  return out;
}

TinyProblem random_tiny_problem(std::uint64_t seed, Mode mode, bool with_prior, const TinyShape& shape) {
  Rng rng = substream(seed, "verify.tiny");
  const bool pairwise = mode != Mode::ueg;
  const bool temporal = mode == Mode::steg || mode == Mode::gsteg;

  GraphSpec spec;
  spec.num_streams = uniform_int(rng, std::max(shape.min_streams, pairwise ? std::min(2, shape.max_streams) : 1), shape.max_streams);
  spec.num_steps = uniform_int(rng, std::max(shape.min_steps, temporal ? std::min(2, shape.max_steps) : 1), shape.max_steps);
  const int rank = uniform_int(rng, 1, std::max(1, std::min(shape.max_rank, shape.max_labels - 1)));
  const int min_labels = mode == Mode::gsteg ? rank + 1 : 2;
  for (int k = 0; k < spec.num_streams; ++k) {
    spec.label_sizes.push_back(uniform_int(rng, min_labels, std::max(min_labels, shape.max_labels)));
    spec.feature_dims.push_back(uniform_int(rng, 1, shape.max_feature_dim));
  }

  ModelConfig cfg;
  cfg.mode = mode;
  cfg.rank = rank;
  cfg.bandwidth = uniform(rng, 0.8, 3.0);
  if (with_prior) {
    const int d = 2;
    for (int k = 0; k < spec.num_streams; ++k) {
      Matrix emb(spec.label_sizes[k], d);
      for (Eigen::Index i = 0; i < emb.size(); ++i) emb.data()[i] = shape.param_scale * standard_normal(rng);
      cfg.label_embeddings.push_back(emb);
    }
  }

  EnergyModel model = EnergyModel::create(spec, cfg, seed);
  for (Tensor& t : model.tensors()) {
    for (double& v : t.values) v = uniform(rng, -shape.param_scale, shape.param_scale);
  }

  ObservationInstance inst;
  inst.spec = spec;
  Assignment gold;
  for (int t = 0; t < spec.num_steps; ++t) {
    inst.features.emplace_back();
    gold.labels.emplace_back();
    for (int k = 0; k < spec.num_streams; ++k) {
      std::vector<double> x(spec.feature_dims[k]);
      for (double& v : x) v = standard_normal(rng);
      inst.features[t].push_back(std::move(x));
      gold.labels[t].push_back(static_cast<int>(uniform_index(rng, spec.label_sizes[k])));
    }
  }
  inst.gold = gold;
  return {std::move(model), std::move(inst)};
}

void limit_coupling(TinyProblem& problem, double bound) {
  const EnergyField field = build_field(problem.model, problem.inst);
  double largest = 0.0;
  for (const Matrix& m : field.transition) {
    if (m.size() != 0) largest = std::max(largest, m.cwiseAbs().maxCoeff());
  }
  if (largest <= bound) return;
  ModelConfig cfg = problem.model.config();
  cfg.pairwise_scale *= bound / largest;
  problem.model = EnergyModel::from_tensors(problem.model.spec(), cfg, problem.model.tensors());
}

std::vector<SuiteResult> verify_gradcheck(std::uint64_t seed, int cases, double epsilon) {
  struct Variant {
    const char* name;
    Mode mode;
    bool prior;
  };
  const Variant variants[] = {{"gradcheck/ueg", Mode::ueg, false},
                              {"gradcheck/seg", Mode::seg, false},
                              {"gradcheck/steg", Mode::steg, false},
                              {"gradcheck/gsteg", Mode::gsteg, false},
                              {"gradcheck/gsteg+prior", Mode::gsteg, true}};
  InferenceOptions opts;
  opts.num_passes = 3;
  std::vector<SuiteResult> out;
  std::uint64_t idx = 0;
  for (const Variant& v : variants) {
    const auto start = Clock::now();
    SuiteResult r;
    r.name = v.name;
    r.threshold = 1e-4;
    r.cases = cases;
    for (int c = 0; c < cases; ++c) {
      const std::uint64_t case_seed = splitmix64(seed + 1000003ULL * ++idx);
      TinyProblem p = random_tiny_problem(case_seed, v.mode, v.prior);
      const double err = finite_diff_check(p.model, p.inst, opts, epsilon);
      if (!(err <= r.worst)) r.worst = err;
    }
    out.push_back(finish(r, start));
  }
  return out;
}

SuiteResult verify_free_energy(std::uint64_t seed, int cases, Schedule schedule) {
  const auto start = Clock::now();
  SuiteResult r;
  r.name = "freeenergy/monotone";
  r.threshold = 1e-9;
  r.cases = cases;
  if (schedule != Schedule::sequential) {
    r.skipped = true;
    r.passed = true;
    r.detail = "monotonicity holds for the sequential schedule only";
    r.seconds = seconds_since(start);
    return r;
  }
  r.worst = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < cases; ++c) {
    TinyProblem p = random_tiny_problem(splitmix64(seed + 7919ULL * (c + 1)), Mode::gsteg);
    const EnergyField field = build_field(p.model, p.inst);
    Marginals q = init_marginals(field);
    double f = free_energy(field, q);
    for (int pass = 0; pass < 5; ++pass) {
      for (int a = 0; a < field.num_nodes(); ++a) {
        q.nodes[a] = node_update(field, q, a);
        const double next = free_energy(field, q);
        r.worst = std::max(r.worst, next - f);
        f = next;
      }
    }
  }
  r.detail = "largest single-update increase";
  return finish(r, start);
}

std::vector<SuiteResult> verify_oracle(std::uint64_t seed, int cases) {
  std::vector<SuiteResult> out;
  InferenceOptions opts;
  opts.num_passes = 3;

  {
    const auto start = Clock::now();
    SuiteResult r;
    r.name = "oracle/ueg-exact";
    r.threshold = 1e-12;
    r.cases = cases;
    for (int c = 0; c < cases; ++c) {
      TinyProblem p = random_tiny_problem(splitmix64(seed + 104729ULL * (c + 1)), Mode::ueg);
      const EnergyField field = build_field(p.model, p.inst);
      const Marginals mf = run_mean_field(field, opts);
      const GibbsDistribution exact = exact_inference(field);
      for (std::size_t a = 0; a < mf.nodes.size(); ++a) {
        r.worst = std::max(r.worst, (mf.nodes[a] - exact.exact_marginals.nodes[a]).cwiseAbs().maxCoeff());
      }
    }
    out.push_back(finish(r, start));
  }

  const auto start = Clock::now();
  SuiteResult weak;
  weak.name = "oracle/weak-coupling-l1";
  weak.threshold = 0.05;
  weak.cases = cases;
  SuiteResult residual;
  residual.name = "oracle/fixed-point-residual";
  residual.threshold = 1e-8;
  residual.cases = cases;
  InferenceOptions converge;
  converge.num_passes = 200;
  TinyShape shape;
  shape.min_streams = shape.max_streams = 2;
  shape.min_steps = shape.max_steps = 2;
  const Mode modes[] = {Mode::seg, Mode::steg, Mode::gsteg};
  for (int c = 0; c < cases; ++c) {
    const Mode mode = modes[c % 3];
    TinyProblem p = random_tiny_problem(splitmix64(seed + 15485863ULL * (c + 1)), mode, c % 2 == 1, shape);
    limit_coupling(p, 0.1);
    const EnergyField field = build_field(p.model, p.inst);
    const Marginals mf = run_mean_field(field, converge);
    const GibbsDistribution exact = exact_inference(field);
    for (std::size_t a = 0; a < mf.nodes.size(); ++a) {
      weak.worst = std::max(weak.worst, (mf.nodes[a] - exact.exact_marginals.nodes[a]).lpNorm<1>());
    }
    residual.worst = std::max(residual.worst, fixed_point_residual(field, mf));
  }
  weak.detail = "K=2, T=2, |phi| <= 0.1";
  out.push_back(finish(weak, start));
  out.push_back(finish(residual, start));
  return out;
}

// ---------------------------------------------------------------------------

namespace oracle {

double viou(const Trajectory& a, const Trajectory& b) {
  std::map<int, Box> fa, fb;
  for (int f = a.start_frame(); f < a.end_frame(); ++f) fa[f] = *a.at(f);
  for (int f = b.start_frame(); f < b.end_frame(); ++f) fb[f] = *b.at(f);
  std::set<int> frames;
  for (const auto& kv : fa) frames.insert(kv.first);
  for (const auto& kv : fb) frames.insert(kv.first);
  double inter = 0.0, uni = 0.0;
  for (int f : frames) {
    const bool ha = fa.count(f) > 0, hb = fb.count(f) > 0;
    if (ha && hb) {
      const Box& x = fa[f];
      const Box& y = fb[f];
      const double w = std::max(0.0, std::min(x.x2, y.x2) - std::max(x.x1, y.x1));
      const double h = std::max(0.0, std::min(x.y2, y.y2) - std::max(x.y1, y.y1));
      inter += w * h;
      uni += x.area() + y.area() - w * h;
    } else {
      uni += ha ? fa[f].area() : fb[f].area();
    }
  }
  return uni > 0.0 ? inter / uni : 0.0;
}

namespace {

// Ranked hit flags for one video; predictions must carry distinct scores.
std::vector<bool> hits_for(const std::vector<RelationInstance>& preds, const std::vector<RelationInstance>& gt,
                           double thresh, bool localized) {
  std::vector<RelationInstance> ranked = preds;
  std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.score > y.score; });
  std::vector<bool> taken(gt.size(), false);
  std::vector<bool> hits;
  for (const RelationInstance& p : ranked) {
    double best = -1.0;
    std::size_t pick = gt.size();
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (taken[g] || p.triplet != gt[g].triplet) continue;
      double overlap = 1.0;
      if (localized) {
        const double s = oracle::viou(*p.subject, *gt[g].subject);
        const double o = oracle::viou(*p.object, *gt[g].object);
        if (!(s > thresh && o > thresh)) continue;
        overlap = std::min(s, o);
      }
      if (overlap > best) {
        best = overlap;
        pick = g;
      }
    }
    if (pick < gt.size()) taken[pick] = true;
    hits.push_back(pick < gt.size());
  }
  return hits;
}

// Mean over recall levels 1/n, 2/n, ... of the best precision reached at or
// beyond that recall.
double ap_by_recall_levels(const std::vector<bool>& hits, std::size_t npos) {
  std::vector<std::size_t> found;
  std::vector<double> precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tp += hits[i] ? 1 : 0;
    found.push_back(tp);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double total = 0.0;
  for (std::size_t m = 1; m <= npos; ++m) {
    double best = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
      if (found[i] >= m) best = std::max(best, precision[i]);
    }
    total += best;
  }
  return total / static_cast<double>(npos);
}

const std::vector<RelationInstance>& preds_of(const RelationsByVideo& preds, const std::string& video) {
  static const std::vector<RelationInstance> none;
  auto it = preds.find(video);
  return it == preds.end() ? none : it->second;
}

}  // namespace

double recall_at(const RelationsByVideo& preds, const RelationsByVideo& gt, int k, double thresh, bool localized) {
  double sum = 0.0;
  int videos = 0;
  for (const auto& [video, g] : gt) {
    if (g.empty()) continue;
    const std::vector<bool> hits = hits_for(preds_of(preds, video), g, thresh, localized);
    int found = 0;
    for (int i = 0; i < k && i < static_cast<int>(hits.size()); ++i) found += hits[i] ? 1 : 0;
    sum += static_cast<double>(found) / static_cast<double>(g.size());
    ++videos;
  }
  return videos ? sum / videos : std::numeric_limits<double>::quiet_NaN();
}

double mean_ap(const RelationsByVideo& preds, const RelationsByVideo& gt, double thresh, bool localized) {
  double sum = 0.0;
  int videos = 0;
  for (const auto& [video, g] : gt) {
    if (g.empty()) continue;
    sum += ap_by_recall_levels(hits_for(preds_of(preds, video), g, thresh, localized), g.size());
    ++videos;
  }
  return videos ? sum / videos : std::numeric_limits<double>::quiet_NaN();
}

double precision_at(const RelationsByVideo& preds, const RelationsByVideo& gt, int k) {
  double sum = 0.0;
  int videos = 0;
  for (const auto& [video, g] : gt) {
    if (g.empty()) continue;
    std::map<Triplet, double> best;
    for (const RelationInstance& p : preds_of(preds, video)) {
      auto it = best.find(p.triplet);
      if (it == best.end() || p.score > it->second) best[p.triplet] = p.score;
    }
    std::vector<std::pair<double, Triplet>> ranked;
    for (const auto& [t, s] : best) ranked.emplace_back(s, t);
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
    int correct = 0;
    for (int i = 0; i < k && i < static_cast<int>(ranked.size()); ++i) {
      for (const RelationInstance& r : g) {
        if (r.triplet == ranked[i].second) {
          ++correct;
          break;
        }
      }
    }
    sum += static_cast<double>(correct) / k;
    ++videos;
  }
  return videos ? sum / videos : std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> accuracy(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gold) {
  const std::size_t e = gold.empty() ? 0 : gold[0].size();
  std::vector<double> acc(e + 1, 0.0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (preds[i] == gold[i]) acc[e] += 1.0;
    for (std::size_t j = 0; j < e; ++j) acc[j] += preds[i][j] == gold[i][j] ? 1.0 : 0.0;
  }
  for (double& a : acc) a /= static_cast<double>(gold.size());
  return acc;
}

}  // namespace oracle

namespace {

Trajectory random_track(Rng& rng, int frames) {
  const int start = uniform_int(rng, 0, frames - 2);
  const int len = uniform_int(rng, 1, frames - start);
  double x = uniform(rng, 0, 8), y = uniform(rng, 0, 8);
  std::vector<Box> boxes;
  for (int i = 0; i < len; ++i) {
    x += uniform(rng, -0.5, 0.5);
    y += uniform(rng, -0.5, 0.5);
    boxes.push_back({x, y, x + uniform(rng, 1, 4), y + uniform(rng, 1, 4)});
  }
  return Trajectory(start, boxes);
}

RelationInstance random_relation(Rng& rng, int vocab, int frames) {
  RelationInstance r;
  for (int& v : r.triplet) v = uniform_int(rng, 0, vocab - 1);
  r.score = uniform01(rng);
  r.span = {0, frames};
  r.subject = random_track(rng, frames);
  r.object = random_track(rng, frames);
  return r;
}

// Predictions that are jittered copies of ground truth plus distractors.
void random_detection_case(Rng& rng, RelationsByVideo& preds, RelationsByVideo& gt) {
  const int videos = uniform_int(rng, 1, 3);
  const int vocab = uniform_int(rng, 1, 3);
  for (int v = 0; v < videos; ++v) {
    const std::string id = "v" + std::to_string(v);
    const int frames = uniform_int(rng, 3, 10);
    auto& g = gt[id];
    const int ng = uniform_int(rng, 0, 4);
    for (int i = 0; i < ng; ++i) g.push_back(random_relation(rng, vocab, frames));
    auto& p = preds[id];
    for (const RelationInstance& r : g) {
      if (uniform01(rng) < 0.3) continue;
      RelationInstance copy = r;
      copy.score = uniform01(rng);
      if (uniform01(rng) < 0.5) copy.subject = random_track(rng, frames);
      p.push_back(copy);
    }
    const int extra = uniform_int(rng, 0, 5);
    for (int i = 0; i < extra; ++i) p.push_back(random_relation(rng, vocab, frames));
  }
}

void track_worst(SuiteResult& r, double a, double b) {
  if (std::isnan(a) && std::isnan(b)) return;
  const double d = std::abs(a - b);
  if (!(d <= r.worst)) r.worst = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
}

}  // namespace

std::vector<SuiteResult> verify_metrics(std::uint64_t seed, int cases) {
  const auto start = Clock::now();
  SuiteResult viou_r, det_r, tag_r, rec_r;
  viou_r.name = "metrics/viou";
  det_r.name = "metrics/detection";
  tag_r.name = "metrics/tagging";
  rec_r.name = "metrics/recognition";
  for (SuiteResult* r : {&viou_r, &det_r, &tag_r, &rec_r}) {
    r->threshold = 1e-12;
    r->cases = cases;
  }
  Rng rng = substream(seed, "verify.metrics");
  for (int c = 0; c < cases; ++c) {
    const int frames = uniform_int(rng, 2, 12);
    const Trajectory a = random_track(rng, frames), b = random_track(rng, frames);
    track_worst(viou_r, viou(a, b), oracle::viou(a, b));

    RelationsByVideo preds, gt;
    random_detection_case(rng, preds, gt);
    for (bool localized : {true, false}) {
      DetectionOptions opts;
      opts.ks = {1, 2, 5};
      opts.localized = localized;
      const MetricReport rep = detection_metrics(preds, gt, opts);
      for (int k : opts.ks) {
        track_worst(det_r, rep.recall_at.at(k), oracle::recall_at(preds, gt, k, 0.5, localized));
      }
      track_worst(det_r, *rep.mean_ap, oracle::mean_ap(preds, gt, 0.5, localized));
    }
    const MetricReport tag = tagging_metrics(preds, gt, {1, 3, 5});
    for (int k : {1, 3, 5}) track_worst(tag_r, tag.precision_at.at(k), oracle::precision_at(preds, gt, k));

    const int n = uniform_int(rng, 1, 20);
    const int e = uniform_int(rng, 1, 4);
    std::vector<std::vector<int>> p(n, std::vector<int>(e)), g(n, std::vector<int>(e));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < e; ++j) {
        g[i][j] = uniform_int(rng, 0, 2);
        p[i][j] = uniform_int(rng, 0, 2);
      }
    }
    const MetricReport rec = recognition_metrics(p, g);
    const std::vector<double> want = oracle::accuracy(p, g);
    const auto names = default_entity_names(e);
    for (int j = 0; j < e; ++j) track_worst(rec_r, rec.acc_at_1.at(names[j]), want[j]);
    track_worst(rec_r, rec.acc_at_1.at("relationship"), want[e]);
  }
  std::vector<SuiteResult> out;
  for (SuiteResult* r : {&viou_r, &det_r, &tag_r, &rec_r}) out.push_back(finish(*r, start));
  return out;
}

}  // namespace gsteg
