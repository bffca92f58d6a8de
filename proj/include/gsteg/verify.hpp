#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gsteg/energy.hpp"
#include "gsteg/eval.hpp"
#include "gsteg/inference.hpp"

namespace gsteg {

/// Outcome of one invariant suite: the worst statistic seen against its bound.
struct SuiteResult {
  std::string name;
  bool passed = false;
  bool skipped = false;
  double worst = 0.0;
  double threshold = 0.0;
  int cases = 0;
  double seconds = 0.0;
  std::string detail;
};

std::string format_result(const SuiteResult& r);

struct TinyProblem {
  EnergyModel model;
  ObservationInstance inst;
};

struct TinyShape {
  int min_streams = 1;
  int min_steps = 1;
  int max_streams = 3;
  int max_steps = 3;
  int max_labels = 4;
  int max_rank = 2;
  int max_feature_dim = 3;
  double param_scale = 0.5;
};

/// Seeded random model and gold-labelled instance for property checks.
TinyProblem random_tiny_problem(std::uint64_t seed, Mode mode, bool with_prior = false,
                                const TinyShape& shape = {});

/// Rescales the pairwise parameters so every scaled transition entry of the
/// instance's field is at most `bound` in magnitude.
void limit_coupling(TinyProblem& problem, double bound);

std::vector<SuiteResult> verify_gradcheck(std::uint64_t seed, int cases = 20, double epsilon = 1e-5);
SuiteResult verify_free_energy(std::uint64_t seed, int cases = 100, Schedule schedule = Schedule::sequential);
std::vector<SuiteResult> verify_oracle(std::uint64_t seed, int cases = 50);
std::vector<SuiteResult> verify_metrics(std::uint64_t seed, int cases = 200);

// Brute-force metric definitions, coded without the evaluation module's
// matching or ranking helpers.
namespace oracle {

double viou(const Trajectory& a, const Trajectory& b);
double recall_at(const RelationsByVideo& preds, const RelationsByVideo& gt, int k, double thresh, bool localized);
double mean_ap(const RelationsByVideo& preds, const RelationsByVideo& gt, double thresh, bool localized);
double precision_at(const RelationsByVideo& preds, const RelationsByVideo& gt, int k);
std::vector<double> accuracy(const std::vector<std::vector<int>>& preds, const std::vector<std::vector<int>>& gold);

}  // namespace oracle

}  // namespace gsteg
