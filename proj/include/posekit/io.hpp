#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "posekit/augment.hpp"
#include "posekit/common.hpp"
#include "posekit/decode.hpp"
#include "posekit/errors.hpp"
#include "posekit/evalkit.hpp"
#include "posekit/geometry.hpp"
#include "posekit/losses.hpp"
#include "posekit/object_model.hpp"
#include "posekit/ply.hpp"
#include "posekit/version.hpp"

namespace posekit {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON representations
// ---------------------------------------------------------------------------

inline json to_json(const CameraModel& cam) {
  return json{{"fx", cam.fx},       {"fy", cam.fy},
              {"cx", cam.cx},       {"cy", cam.cy},
              {"dist_min", cam.dist_min}, {"dist_max", cam.dist_max}};
}

inline CameraModel camera_from_json(const json& j) {
  CameraModel cam{j.at("fx"), j.at("fy"), j.at("cx"), j.at("cy"), j.at("dist_min"),
                  j.at("dist_max")};
  cam.validate();
  return cam;
}

inline json rot_to_json(const Rot3& r) {
  json arr = json::array();
  for (int i = 0; i < 9; ++i) arr.push_back(r.matrix()(i / 3, i % 3));
  return arr;
}

inline Rot3 rot_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 9) throw ParseError("rotation: expected 9 floats");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = arr[static_cast<size_t>(i)];
  return Rot3(m);
}

inline json to_json(const Pose& p) {
  return json{{"R", rot_to_json(p.r)}, {"t", {p.t.x(), p.t.y(), p.t.z()}}};
}

inline Pose pose_from_json(const json& j) {
  Pose p;
  p.r = rot_from_json(j.at("R"));
  const auto& t = j.at("t");
  if (!t.is_array() || t.size() != 3) throw ParseError("pose: t must have 3 floats");
  p.t = Vec3(t[0], t[1], t[2]);
  return p;
}

inline json to_json(const EvalRecord& r) {
  return json{{"object", r.object},
              {"R_gt", rot_to_json(r.gt.r)},
              {"t_gt", {r.gt.t.x(), r.gt.t.y(), r.gt.t.z()}},
              {"R_pred", rot_to_json(r.pred.r)},
              {"t_pred", {r.pred.t.x(), r.pred.t.y(), r.pred.t.z()}}};
}

inline EvalRecord eval_record_from_json(const json& j) {
  EvalRecord r;
  r.object = j.at("object");
  r.gt.r = rot_from_json(j.at("R_gt"));
  r.pred.r = rot_from_json(j.at("R_pred"));
  const auto& tg = j.at("t_gt");
  const auto& tp = j.at("t_pred");
  r.gt.t = Vec3(tg[0], tg[1], tg[2]);
  r.pred.t = Vec3(tp[0], tp[1], tp[2]);
  return r;
}

inline json to_json(const RawDetection& d) {
  json kps = json::array();
  for (const auto& k : d.kps) kps.push_back({k.u, k.v, k.vis_logit});
  return json{{"score", d.score_logit},
              {"box", d.box},
              {"rot9", d.rot9},
              {"depth_logit", d.depth_logit},
              {"center", {d.ox, d.oy}},
              {"kps", kps}};
}

inline RawDetection raw_detection_from_json(const json& j) {
  RawDetection d;
  d.score_logit = j.at("score");
  const auto& box = j.at("box");
  for (int i = 0; i < 4; ++i) d.box[static_cast<size_t>(i)] = box[static_cast<size_t>(i)];
  const auto& rot = j.at("rot9");
  if (rot.size() != 9) throw ParseError("raw detection: rot9 must have 9 floats");
  for (int i = 0; i < 9; ++i) d.rot9[static_cast<size_t>(i)] = rot[static_cast<size_t>(i)];
  d.depth_logit = j.at("depth_logit");
  d.ox = j.at("center")[0];
  d.oy = j.at("center")[1];
  const auto& kps = j.at("kps");
  if (kps.size() != 9) throw ParseError("raw detection: expected 9 keypoint slots");
  for (int i = 0; i < 9; ++i) {
    d.kps[static_cast<size_t>(i)] = {kps[static_cast<size_t>(i)][0], kps[static_cast<size_t>(i)][1],
                                     kps[static_cast<size_t>(i)][2]};
  }
  return d;
}

inline json to_json(const Detection6D& d) {
  json kps = json::array();
  for (const auto& k : d.kps) kps.push_back({k.u, k.v, k.visible ? 1 : 0});
  return json{{"pose", to_json(d.pose)},
              {"score", d.score},
              {"box", {d.box.cx, d.box.cy, d.box.w, d.box.h}},
              {"kps", kps}};
}

inline json to_json(const LossWeights& w) {
  return json{{"lambda_r", w.lambda_r},
              {"lambda_t", w.lambda_t},
              {"lambda_kp", w.lambda_kp},
              {"lambda_bb", w.lambda_bb}};
}

inline LossWeights loss_weights_from_json(const json& j) {
  LossWeights w;
  w.lambda_r = j.value("lambda_r", w.lambda_r);
  w.lambda_t = j.value("lambda_t", w.lambda_t);
  w.lambda_kp = j.value("lambda_kp", w.lambda_kp);
  w.lambda_bb = j.value("lambda_bb", w.lambda_bb);
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Files: JSON, JSON-lines, binary raw detections
// ---------------------------------------------------------------------------

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& items) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& item : items) f << to_json(item).dump() << "\n";
}

// Flat little-endian float32 layout, 44 values per record:
// score, box[4], rot9[9], depth_logit, center[2], kps 9x(u,v,vis).
inline constexpr int kRawDetectionFloats = 44;

inline void write_raw_detections_binary(const std::string& path,
                                        const std::vector<RawDetection>& dets) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  for (const auto& d : dets) {
    float buf[kRawDetectionFloats];
    int k = 0;
    buf[k++] = static_cast<float>(d.score_logit);
    for (double v : d.box) buf[k++] = static_cast<float>(v);
    for (double v : d.rot9) buf[k++] = static_cast<float>(v);
    buf[k++] = static_cast<float>(d.depth_logit);
    buf[k++] = static_cast<float>(d.ox);
    buf[k++] = static_cast<float>(d.oy);
    for (const auto& kp : d.kps) {
      buf[k++] = static_cast<float>(kp.u);
      buf[k++] = static_cast<float>(kp.v);
      buf[k++] = static_cast<float>(kp.vis_logit);
    }
    f.write(reinterpret_cast<const char*>(buf), sizeof(buf));
  }
}

inline std::vector<RawDetection> read_raw_detections_binary(const std::string& path) {
  const std::string bytes = read_file(path);
  const std::size_t rec_size = kRawDetectionFloats * sizeof(float);
  if (bytes.size() % rec_size != 0) {
    throw ParseError(path + ": size is not a multiple of " + std::to_string(rec_size));
  }
  std::vector<RawDetection> out(bytes.size() / rec_size);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float buf[kRawDetectionFloats];
    std::memcpy(buf, bytes.data() + i * rec_size, rec_size);
    RawDetection& d = out[i];
    int k = 0;
    d.score_logit = buf[k++];
    for (int b = 0; b < 4; ++b) d.box[static_cast<size_t>(b)] = buf[k++];
    for (int b = 0; b < 9; ++b) d.rot9[static_cast<size_t>(b)] = buf[k++];
    d.depth_logit = buf[k++];
    d.ox = buf[k++];
    d.oy = buf[k++];
    for (int b = 0; b < 9; ++b) {
      d.kps[static_cast<size_t>(b)].u = buf[k++];
      d.kps[static_cast<size_t>(b)].v = buf[k++];
      d.kps[static_cast<size_t>(b)].vis_logit = buf[k++];
    }
  }
  return out;
}

inline std::vector<RawDetection> load_raw_detections(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".bin") {
    return read_raw_detections_binary(path);
  }
  std::vector<RawDetection> out;
  for (const auto& j : read_jsonl(path)) out.push_back(raw_detection_from_json(j));
  return out;
}

// Loads <stem>.ply (+ optional <stem>.json sidecar with {diameter, symmetric}).
inline ObjectModel load_object_model(const std::string& ply_path, const std::string& name) {
  std::vector<Vec3> pts = load_ply_vertices(ply_path);
  std::optional<double> diameter;
  bool symmetric = default_symmetric_objects().count(name) > 0;
  const std::string sidecar = ply_path.substr(0, ply_path.size() - 4) + ".json";
  if (std::ifstream(sidecar).good()) {
    const json j = load_json(sidecar);
    if (j.contains("diameter")) diameter = j.at("diameter").get<double>();
    if (j.contains("symmetric")) symmetric = j.at("symmetric").get<bool>();
  }
  return ObjectModel::from_points(name, std::move(pts), diameter, symmetric);
}

// ---------------------------------------------------------------------------
// Config: JSON natively, plus a small TOML subset ([section], key = value,
// numbers / booleans / "strings" / [simple, arrays]).
// ---------------------------------------------------------------------------

namespace iodetail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline json toml_value(const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  if (v.empty()) throw ParseError(where + ": empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ParseError(where + ": unterminated string");
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '[') {
    if (v.back() != ']') throw ParseError(where + ": unterminated array");
    json arr = json::array();
    std::string inner = v.substr(1, v.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!trim(item).empty()) arr.push_back(toml_value(item, where));
    }
    return arr;
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    if (v.find('.') == std::string::npos && v.find('e') == std::string::npos &&
        v.find('E') == std::string::npos && d == static_cast<long long>(d)) {
      return static_cast<long long>(d);
    }
    return d;
  } catch (const std::exception&) {
    throw ParseError(where + ": cannot parse value '" + v + "'");
  }
}

}  // namespace iodetail

inline json parse_toml_subset(const std::string& text, const std::string& path = "<toml>") {
  json root = json::object();
  json* section = &root;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = iodetail::trim(line);
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(where + ": bad section header");
      const std::string name = iodetail::trim(line.substr(1, line.size() - 2));
      if (name.empty()) throw ParseError(where + ": empty section name");
      section = &root[name];
      if (section->is_null()) *section = json::object();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
    const std::string key = iodetail::trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(where + ": empty key");
    (*section)[key] = iodetail::toml_value(line.substr(eq + 1), where);
  }
  return root;
}

// JSON or TOML depending on extension (.toml) / leading '{'.
inline json load_config(const std::string& path) {
  const std::string text = read_file(path);
  const bool is_toml = path.size() > 5 && path.substr(path.size() - 5) == ".toml";
  if (is_toml) return parse_toml_subset(text, path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": " + e.what());
    }
  }
  return parse_toml_subset(text, path);
}

// ---------------------------------------------------------------------------
// Run manifest: version, seed, config hash, input hashes. Identical
// manifests imply identical outputs.
// ---------------------------------------------------------------------------

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_file(const std::string& path) {
  return hex64(fnv1a64(read_file(path)));
}

struct ManifestBuilder {
  json j;

  ManifestBuilder(const std::string& command, std::uint64_t seed, const json& config) {
    j["version"] = kVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config_hash"] = hex64(fnv1a64(config.dump()));
    j["inputs"] = json::object();
  }

  void add_input(const std::string& path) {
    j["inputs"][path] = hash_file(path);
  }

  void write(const std::string& path) const { write_file(path, j.dump(2) + "\n"); }
};

}  // namespace posekit
