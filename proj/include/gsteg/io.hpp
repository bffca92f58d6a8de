#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gsteg/energy.hpp"
#include "gsteg/eval.hpp"
#include "gsteg/graph.hpp"
#include "gsteg/inference.hpp"
#include "gsteg/learning.hpp"

namespace gsteg {

using nlohmann::json;

/// Malformed input file; `line` is 1-based, 0 when not line-oriented.
class DataError : public Error {
 public:
  DataError(const std::string& what, std::string path = {}, int line = 0);
  const std::string& path() const { return path_; }
  int line() const { return line_; }

 private:
  std::string path_;
  int line_;
};

inline constexpr const char* kModelSchema = "gsteg.model/1";
inline constexpr const char* kCheckpointSchema = "gsteg.checkpoint/1";

json spec_to_json(const GraphSpec& spec);
GraphSpec spec_from_json(const json& j);

// Instance line schema:
// {"spec": {...}, "features": [[[x]]], "gold": [[int]] | null, "meta": {...}}
json instance_to_json(const ObservationInstance& inst);
ObservationInstance instance_from_json(const json& j);

std::vector<ObservationInstance> read_instances(const std::filesystem::path& path);
void write_instances(const std::filesystem::path& path, const std::vector<ObservationInstance>& instances);

json model_to_json(const EnergyModel& model);
EnergyModel model_from_json(const json& j);

json checkpoint_to_json(const EnergyModel& model, const OptimizerState* state);
/// Accepts a checkpoint or a bare model document.
EnergyModel model_from_checkpoint(const json& j);

json marginals_to_json(const Marginals& q);
json assignment_to_json(const Assignment& y);

// Prediction line schema:
// {"video": id, "triplet": [s,p,o], "score": x, "span": [start,end],
//  "straj": [[frame,x1,y1,x2,y2]] | null, "otraj": ...}
json relation_to_json(const std::string& video, const RelationInstance& rel);
RelationInstance relation_from_json(const json& j, std::string* video);
RelationsByVideo read_relations(const std::filesystem::path& path);

/// A JSON array of triplets, or one triplet array per line.
std::set<Triplet> read_triplets(const std::filesystem::path& path);

json report_to_json(const MetricReport& report);

json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace gsteg
