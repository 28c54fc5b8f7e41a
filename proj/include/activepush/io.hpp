/// @file
/// JSON serialization of models, problems and plans, and the CSV record
/// format shared by the experiment runners.

#pragma once

#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "activepush/planner.hpp"
#include "activepush/push_simulator.hpp"
#include "activepush/residual_model.hpp"

namespace activepush {

using nlohmann::json;

inline constexpr const char* kCheckpointFormat = "activepush-model";
inline constexpr int kCheckpointVersion = 1;

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

/// UTC timestamp in ISO 8601, used only in header comment lines.
inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------- basic types

inline json to_json(const ObjectSpec& o) {
  return {{"half_x", o.half_x}, {"half_y", o.half_y}, {"friction_ratio_c", o.friction_ratio_c}};
}

inline ObjectSpec object_from_json(const json& j) {
  ObjectSpec o;
  o.half_x = j.at("half_x").get<double>();
  o.half_y = j.at("half_y").get<double>();
  o.friction_ratio_c = j.value("friction_ratio_c", kPriorFrictionRatio);
  validate(o);
  return o;
}

inline json to_json(const PushParams& p) { return {{"side", p.side}, {"offset", p.offset}, {"distance", p.distance}}; }

inline PushParams push_from_json(const json& j) {
  return {j.at("side").get<int>(), j.at("offset").get<double>(), j.at("distance").get<double>()};
}

inline json to_json(const Pose2& p) { return json::array({p.x, p.y, p.theta}); }

inline Pose2 pose_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("pose must be [x, y, theta]");
  return Pose2(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json interactions_to_json(const std::vector<Interaction>& data) {
  json rows = json::array();
  for (const auto& d : data) {
    rows.push_back({d.params.side, d.params.offset, d.params.distance, d.outcome.x, d.outcome.y, d.outcome.theta});
  }
  return rows;
}

inline std::vector<Interaction> interactions_from_json(const json& rows) {
  std::vector<Interaction> out;
  for (const auto& r : rows) {
    if (!r.is_array() || r.size() != 6) throw std::runtime_error("interaction rows must have 6 entries");
    out.push_back({{r[0].get<int>(), r[1].get<double>(), r[2].get<double>()},
                   Pose2(r[3].get<double>(), r[4].get<double>(), r[5].get<double>())});
  }
  return out;
}

// ---------------------------------------------------------------- checkpoints

/// Trained model together with the data it was fitted to.
struct Checkpoint {
  DynamicsModel model;
  std::vector<Interaction> train_data;
};

/// Versioned checkpoint with a shape header (kind, layer dims, parameter
/// count) that is checked on load.
inline json checkpoint_to_json(const Checkpoint& c) {
  const DynamicsModel& m = c.model;
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["kind"] = to_string(m.kind());
  j["object"] = to_json(m.prior_object());
  j["max_distance"] = m.max_distance();
  if (m.kind() != ModelKind::kPhysics) {
    const auto& net = m.network();
    j["activation"] = to_string(net.activation());
    j["dims"] = net.dims();
    j["num_params"] = net.num_params();
    j["params"] = std::vector<double>(net.params().data(), net.params().data() + net.num_params());
    const LabelScaler& s = m.scaler();
    j["scaler"] = {{"mean", {s.mean[0], s.mean[1], s.mean[2]}}, {"scale", {s.scale[0], s.scale[1], s.scale[2]}}};
  }
  j["train_data"] = interactions_to_json(c.train_data);
  return j;
}

inline Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", std::string()) != kCheckpointFormat) throw std::runtime_error("not a model checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(j.at("version").get<int>()));
  }
  const ModelKind kind = model_kind_from_string(j.at("kind").get<std::string>());
  const ObjectSpec obj = object_from_json(j.at("object"));
  const double max_distance = j.at("max_distance").get<double>();
  Checkpoint c;
  if (kind == ModelKind::kPhysics) {
    c.model = DynamicsModel(kind, obj, 0, Activation::kTanh, max_distance);
  } else {
    const Activation act = activation_from_string(j.at("activation").get<std::string>());
    c.model = DynamicsModel(kind, obj, 0, act, max_distance);
    auto& net = c.model.network();
    if (j.at("dims").get<std::vector<int>>() != net.dims()) throw std::runtime_error("checkpoint layer dims mismatch");
    const auto params = j.at("params").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(params.size()) != net.num_params() ||
        j.at("num_params").get<Eigen::Index>() != net.num_params()) {
      throw std::runtime_error("checkpoint parameter count mismatch");
    }
    net.params() = Eigen::Map<const Eigen::VectorXd>(params.data(), net.num_params());
    LabelScaler s;
    const auto mean = j.at("scaler").at("mean").get<std::vector<double>>();
    const auto scale = j.at("scaler").at("scale").get<std::vector<double>>();
    if (mean.size() != 3 || scale.size() != 3) throw std::runtime_error("checkpoint scaler must have 3 entries");
    s.mean = Eigen::Vector3d(mean[0], mean[1], mean[2]);
    s.scale = Eigen::Vector3d(scale[0], scale[1], scale[2]);
    c.model.set_scaler(s);
  }
  c.train_data = interactions_from_json(j.at("train_data"));
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  write_text_file(path, checkpoint_to_json(c).dump() + "\n");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- problems and plans

inline json to_json(const PlanningProblem& p) {
  json obstacles = json::array();
  for (const auto& poly : p.obstacles) {
    json pts = json::array();
    for (const auto& v : poly) pts.push_back({v.x(), v.y()});
    obstacles.push_back(pts);
  }
  return {{"id", p.id},
          {"start", to_json(p.start)},
          {"table", {p.table.x_min, p.table.x_max, p.table.y_min, p.table.y_max}},
          {"obstacles", obstacles},
          {"object", to_json(p.object)},
          {"goal_edge", to_string(p.goal_edge)},
          {"overhang_min", p.overhang_min}};
}

inline PlanningProblem problem_from_json(const json& j) {
  PlanningProblem p;
  p.id = j.at("id").get<int>();
  p.start = pose_from_json(j.at("start"));
  const auto t = j.at("table").get<std::vector<double>>();
  if (t.size() != 4) throw std::runtime_error("table must be [x_min, x_max, y_min, y_max]");
  p.table = {t[0], t[1], t[2], t[3]};
  for (const auto& poly : j.value("obstacles", json::array())) {
    Polygon pts;
    for (const auto& v : poly) pts.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    p.obstacles.push_back(pts);
  }
  p.object = object_from_json(j.at("object"));
  p.goal_edge = table_edge_from_string(j.at("goal_edge").get<std::string>());
  p.overhang_min = j.value("overhang_min", 0.025);
  validate(p);
  return p;
}

inline json to_json(const Plan& plan) {
  json controls = json::array(), states = json::array();
  for (const auto& u : plan.controls) controls.push_back(to_json(u));
  for (const auto& s : plan.states) states.push_back(to_json(s));
  return {{"cost", plan.cost()}, {"controls", controls}, {"states", states}};
}

inline Plan plan_from_json(const json& j) {
  Plan plan;
  for (const auto& u : j.at("controls")) plan.controls.push_back(push_from_json(u));
  for (const auto& s : j.at("states")) plan.states.push_back(pose_from_json(s));
  if (plan.states.size() != plan.controls.size() + 1) throw std::runtime_error("plan needs one more state than controls");
  return plan;
}

// ---------------------------------------------------------------- run records

/// One measurement. `round` is the acquisition round (dataset size is
/// n_train); `sampler` is "none" outside the planning experiments.
struct RunRecord {
  std::string experiment;
  std::string method;
  std::string object;
  std::uint64_t seed = 0;
  std::size_t round = 0;
  std::size_t n_train = 0;
  std::string sampler = "none";
  std::string metric;
  double value = 0.0;
};

inline constexpr const char* kRecordHeader = "experiment,method,object,seed,round,n_train,sampler,metric,value";

/// CSV with a leading "# generated ..." comment line; every other byte is a
/// function of the records alone.
inline std::string records_to_csv(const std::vector<RunRecord>& records, const std::string& generator) {
  std::ostringstream out;
  out << "# generated " << utc_timestamp() << " by " << generator << "\n" << kRecordHeader << "\n";
  for (const auto& r : records) {
    out << r.experiment << ',' << r.method << ',' << r.object << ',' << r.seed << ',' << r.round << ',' << r.n_train
        << ',' << r.sampler << ',' << r.metric << ',' << format_double(r.value) << "\n";
  }
  return out.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline std::vector<RunRecord> records_from_csv(std::istream& in) {
  std::vector<RunRecord> out;
  std::string line;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kRecordHeader) throw std::runtime_error("run record CSV: unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw std::runtime_error("run record CSV line " + std::to_string(line_no) + ": expected 9 fields");
    RunRecord r;
    r.experiment = f[0];
    r.method = f[1];
    r.object = f[2];
    r.seed = std::stoull(f[3]);
    r.round = std::stoul(f[4]);
    r.n_train = std::stoul(f[5]);
    r.sampler = f[6];
    r.metric = f[7];
    r.value = std::stod(f[8]);
    out.push_back(r);
  }
  if (!header_seen) throw std::runtime_error("run record CSV: missing header");
  return out;
}

inline std::vector<RunRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return records_from_csv(in);
}

// ---------------------------------------------------------------- benchmark rows

struct BenchmarkRow {
  int problem_id = 0;
  std::string sampler;
  bool solved = false;
  bool success = false;
  std::size_t cost = 0;
  double tracking_error = 0.0;
  double plan_time_ms = -1.0;  ///< negative when timing is not recorded
  std::size_t iterations = 0;
  Plan plan;
};

inline constexpr const char* kBenchmarkHeader = "problem_id,sampler,success,cost,tracking_error,plan_time_ms";

/// Unsolved problems have success 0 and NA cost and tracking error.
inline std::string benchmark_to_csv(const std::vector<BenchmarkRow>& rows, const std::string& generator) {
  std::ostringstream out;
  out << "# generated " << utc_timestamp() << " by " << generator << "\n" << kBenchmarkHeader << "\n";
  for (const auto& r : rows) {
    out << r.problem_id << ',' << r.sampler << ',' << (r.success ? 1 : 0) << ',';
    if (r.solved) {
      out << r.cost << ',' << format_double(r.tracking_error);
    } else {
      out << "NA,NA";
    }
    out << ',';
    if (r.plan_time_ms >= 0.0) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", r.plan_time_ms);
      out << buf;
    } else {
      out << "NA";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace activepush
