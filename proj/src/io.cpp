#include "gsteg/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gsteg {

DataError::DataError(const std::string& what, std::string path, int line)
    : Error((path.empty() ? std::string() : path + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": ") + what),
      path_(std::move(path)),
      line_(line) {}

namespace {

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("field '") + key + "' has the wrong type");
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file", path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

// Line-delimited JSON; wraps errors with the 1-based line number.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (blank(lines[i])) continue;
    const int line_no = static_cast<int>(i) + 1;
    try {
      fn(json::parse(lines[i]));
    } catch (const json::parse_error& e) {
      throw DataError(std::string("invalid JSON: ") + e.what(), path.string(), line_no);
    } catch (const DataError& e) {
      throw DataError(e.what(), path.string(), line_no);
    } catch (const Error& e) {
      throw DataError(e.what(), path.string(), line_no);
    }
  }
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw DataError("ragged matrix");
    for (std::size_t c = 0; c < rows[i].size(); ++c) m(i, c) = rows[i][c];
  }
  return m;
}

json bundle_to_json(const GradientBundle& g) { return g.values; }

json trajectory_to_json(const std::optional<Trajectory>& t) {
  if (!t) return nullptr;
  json out = json::array();
  for (std::size_t i = 0; i < t->boxes().size(); ++i) {
    const Box& b = t->boxes()[i];
    out.push_back({t->start_frame() + static_cast<int>(i), b.x1, b.y1, b.x2, b.y2});
  }
  return out;
}

std::optional<Trajectory> trajectory_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array()) throw DataError("trajectory must be an array");
  std::vector<std::pair<int, Box>> frames;
  for (const json& row : j) {
    if (!row.is_array() || row.size() != 5) throw DataError("trajectory rows are [frame,x1,y1,x2,y2]");
    frames.emplace_back(row[0].get<int>(),
                        Box{row[1].get<double>(), row[2].get<double>(), row[3].get<double>(), row[4].get<double>()});
  }
  return Trajectory::from_frames(frames);
}

json metric_value(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json spec_to_json(const GraphSpec& spec) {
  return {{"K", spec.num_streams},
          {"T", spec.num_steps},
          {"label_sizes", spec.label_sizes},
          {"feature_dims", spec.feature_dims}};
}

GraphSpec spec_from_json(const json& j) {
  GraphSpec spec;
  spec.num_streams = get_field<int>(j, "K");
  spec.num_steps = get_field<int>(j, "T");
  spec.label_sizes = get_field<std::vector<int>>(j, "label_sizes");
  spec.feature_dims = get_field<std::vector<int>>(j, "feature_dims");
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw DataError(e.what());
  }
  return spec;
}

json instance_to_json(const ObservationInstance& inst) {
  json j;
  j["spec"] = spec_to_json(inst.spec);
  j["features"] = inst.features;
  j["gold"] = inst.gold ? json(inst.gold->labels) : json(nullptr);
  j["meta"] = inst.meta.is_null() ? json::object() : inst.meta;
  return j;
}

ObservationInstance instance_from_json(const json& j) {
  ObservationInstance inst;
  if (!j.is_object()) throw DataError("instance must be a JSON object");
  inst.spec = spec_from_json(get_field<json>(j, "spec"));
  inst.features = get_field<std::vector<std::vector<std::vector<double>>>>(j, "features");
  if (j.contains("gold") && !j.at("gold").is_null()) {
    inst.gold = Assignment{get_field<std::vector<std::vector<int>>>(j, "gold")};
  }
  if (j.contains("meta") && !j.at("meta").is_null()) inst.meta = j.at("meta");
  validate_instance(inst);
  return inst;
}

std::vector<ObservationInstance> read_instances(const std::filesystem::path& path) {
  std::vector<ObservationInstance> out;
  for_each_json_line(path, [&](const json& j) { out.push_back(instance_from_json(j)); });
  return out;
}

void write_instances(const std::filesystem::path& path, const std::vector<ObservationInstance>& instances) {
  std::string text;
  for (const auto& inst : instances) text += instance_to_json(inst).dump() + "\n";
  write_text_file(path, text);
}

json model_to_json(const EnergyModel& model) {
  const ModelConfig& cfg = model.config();
  json j;
  j["schema"] = kModelSchema;
  j["spec"] = spec_to_json(model.spec());
  j["mode"] = std::string(to_string(cfg.mode));
  j["rank"] = cfg.rank;
  j["bandwidth"] = cfg.bandwidth;
  j["hidden"] = cfg.hidden;
  j["pairwise_scale"] = cfg.pairwise_scale;
  j["message_rule"] = std::string(to_string(cfg.message_rule));
  if (cfg.has_prior()) {
    json tables = json::array();
    for (const Matrix& s : cfg.label_embeddings) tables.push_back(matrix_to_json(s));
    j["label_embeddings"] = std::move(tables);
  } else {
    j["label_embeddings"] = nullptr;
  }
  json tensors = json::array();
  for (const Tensor& t : model.tensors()) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"data", t.values}});
  }
  j["tensors"] = std::move(tensors);
  return j;
}

EnergyModel model_from_json(const json& j) {
  if (get_field<std::string>(j, "schema") != kModelSchema) throw DataError("unsupported model schema");
  try {
    GraphSpec spec = spec_from_json(get_field<json>(j, "spec"));
    ModelConfig cfg;
    cfg.mode = parse_mode(get_field<std::string>(j, "mode"));
    cfg.rank = get_field<int>(j, "rank");
    cfg.bandwidth = get_field<double>(j, "bandwidth");
    cfg.hidden = get_field<std::vector<int>>(j, "hidden");
    cfg.pairwise_scale = get_field<double>(j, "pairwise_scale");
    cfg.message_rule = parse_message_rule(get_field<std::string>(j, "message_rule"));
    if (j.contains("label_embeddings") && !j.at("label_embeddings").is_null()) {
      for (const json& table : j.at("label_embeddings")) cfg.label_embeddings.push_back(matrix_from_json(table));
    }
    std::vector<Tensor> tensors;
    for (const json& t : get_field<json>(j, "tensors")) {
      tensors.push_back({get_field<std::string>(t, "name"), get_field<std::vector<int>>(t, "shape"),
                         get_field<std::vector<double>>(t, "data")});
    }
    return EnergyModel::from_tensors(std::move(spec), std::move(cfg), std::move(tensors));
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
}

json checkpoint_to_json(const EnergyModel& model, const OptimizerState* state) {
  json j;
  j["schema"] = kCheckpointSchema;
  j["model"] = model_to_json(model);
  if (state) {
    j["optimizer"] = {{"kind", std::string(to_string(state->kind))},
                      {"step", state->step},
                      {"first", bundle_to_json(state->first)},
                      {"second", bundle_to_json(state->second)}};
  } else {
    j["optimizer"] = nullptr;
  }
  return j;
}

EnergyModel model_from_checkpoint(const json& j) {
  if (j.is_object() && j.value("schema", "") == kCheckpointSchema) return model_from_json(j.at("model"));
  return model_from_json(j);
}

json marginals_to_json(const Marginals& q) {
  json out = json::array();
  for (int t = 0; t < q.num_steps(); ++t) {
    json step = json::array();
    for (int k = 0; k < q.num_streams; ++k) {
      const Vector& v = q.at({t, k});
      step.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    }
    out.push_back(std::move(step));
  }
  return out;
}

json assignment_to_json(const Assignment& y) { return y.labels; }

json relation_to_json(const std::string& video, const RelationInstance& rel) {
  return {{"video", video},
          {"triplet", rel.triplet},
          {"score", rel.score},
          {"span", {rel.span.start_frame, rel.span.end_frame}},
          {"straj", trajectory_to_json(rel.subject)},
          {"otraj", trajectory_to_json(rel.object)}};
}

RelationInstance relation_from_json(const json& j, std::string* video) {
  if (!j.is_object()) throw DataError("relation must be a JSON object");
  RelationInstance rel;
  if (video) {
    const json& v = get_field<json>(j, "video");
    *video = v.is_string() ? v.get<std::string>() : v.dump();
  }
  const auto triplet = get_field<std::vector<int>>(j, "triplet");
  if (triplet.size() != 3) throw DataError("triplet must have three labels");
  rel.triplet = {triplet[0], triplet[1], triplet[2]};
  rel.score = j.contains("score") && !j.at("score").is_null() ? get_field<double>(j, "score") : 0.0;
  if (!std::isfinite(rel.score)) throw DataError("score must be finite");
  if (j.contains("span") && !j.at("span").is_null()) {
    const auto span = get_field<std::vector<int>>(j, "span");
    if (span.size() != 2 || span[0] < 0 || span[1] <= span[0]) throw DataError("span must be [start,end) with end > start");
    rel.span = {span[0], span[1]};
  }
  try {
    rel.subject = trajectory_from_json(j.value("straj", json(nullptr)));
    rel.object = trajectory_from_json(j.value("otraj", json(nullptr)));
  } catch (const json::exception&) {
    throw DataError("malformed trajectory");
  }
  return rel;
}

RelationsByVideo read_relations(const std::filesystem::path& path) {
  RelationsByVideo out;
  for_each_json_line(path, [&](const json& j) {
    std::string video;
    RelationInstance rel = relation_from_json(j, &video);
    out[video].push_back(std::move(rel));
  });
  return out;
}

std::set<Triplet> read_triplets(const std::filesystem::path& path) {
  std::set<Triplet> out;
  auto add = [&](const json& t) {
    if (!t.is_array() || t.size() != 3) throw DataError("triplet must be an array of three labels");
    out.insert({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  };
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  json whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded() && whole.is_array() && (whole.empty() || whole[0].is_array())) {
    for (const json& t : whole) add(t);
    return out;
  }
  for_each_json_line(path, add);
  return out;
}

json report_to_json(const MetricReport& report) {
  json j = json::object();
  if (!report.recall_at.empty()) {
    json r = json::object();
    for (const auto& [k, v] : report.recall_at) r[std::to_string(k)] = metric_value(v);
    j["recall_at"] = std::move(r);
  }
  if (!report.precision_at.empty()) {
    json p = json::object();
    for (const auto& [k, v] : report.precision_at) p[std::to_string(k)] = metric_value(v);
    j["precision_at"] = std::move(p);
  }
  if (report.mean_ap) j["mAP"] = metric_value(*report.mean_ap);
  if (!report.acc_at_1.empty()) {
    json a = json::object();
    for (const auto& [name, v] : report.acc_at_1) a[name] = metric_value(v);
    j["acc_at_1"] = std::move(a);
  }
  json per_video = json::object();
  for (const auto& [video, row] : report.per_video) {
    json r = json::object();
    for (const auto& [name, v] : row) r[name] = metric_value(v);
    per_video[video] = std::move(r);
  }
  j["per_video"] = std::move(per_video);
  j["warnings"] = report.warnings;
  return j;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Byte offset to line number.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw DataError(std::string("invalid JSON: ") + e.what(), path.string(), line);
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file", path.string());
  out << text;
}

}  // namespace gsteg
