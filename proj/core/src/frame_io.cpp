#include "rlf/frame_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json_detail.hpp"
#include "rlf/errors.hpp"

namespace rlf::synth {
namespace {

using detail::json;

void put_float(std::string& out, double v) {
  char buf[32];
  const float f = static_cast<float>(v);
  auto res = std::to_chars(buf, buf + sizeof(buf), f == 0.0f ? 0.0f : f);  // no "-0"
  out.append(buf, res.ptr);
}

void put_row(std::string& out, std::initializer_list<double> values) {
  out.push_back('[');
  bool first = true;
  for (double v : values) {
    if (!first) out.push_back(',');
    first = false;
    put_float(out, v);
  }
  out.push_back(']');
}

float as_float(const json& j, const std::string& field) {
  if (!j.is_number()) throw ParseError("field '" + field + "' must be a number");
  return static_cast<float>(j.get<double>());
}

template <std::size_t N>
std::array<float, N> float_row(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != N) {
    throw ParseError("field '" + field + "' must be an array of " + std::to_string(N) + " numbers");
  }
  std::array<float, N> r{};
  for (std::size_t i = 0; i < N; ++i) r[i] = as_float(j[i], field);
  return r;
}

const json& array_field(const json& j, const char* key) {
  const json& v = detail::require(j, key);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array");
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
  if (!out) throw ParseError("write failed for " + path.string());
}

}  // namespace

std::string frame_to_json(const Frame& f) {
  std::string s;
  s.reserve(64 + 48 * (f.radar.size() + f.lidar.size()) + 160 * f.labels.size());
  s += "{\"frame_id\":" + std::to_string(f.frame_id) + ",\"ego_velocity\":";
  put_row(s, {f.ego_velocity[0], f.ego_velocity[1]});
  s += ",\"radar\":[";
  for (std::size_t i = 0; i < f.radar.size(); ++i) {
    const RadarPoint& p = f.radar[i];
    if (i) s.push_back(',');
    put_row(s, {p.x, p.y, p.z, p.v_r, p.v_a, p.rcs});
  }
  s += "],\"lidar\":[";
  for (std::size_t i = 0; i < f.lidar.size(); ++i) {
    const LidarPoint& p = f.lidar[i];
    if (i) s.push_back(',');
    put_row(s, {p.x, p.y, p.z, p.intensity});
  }
  s += "],\"labels\":[";
  for (std::size_t i = 0; i < f.labels.size(); ++i) {
    const Box3D& b = f.labels[i];
    if (i) s.push_back(',');
    s += "{\"class\":\"" + std::string(class_name(b.class_id)) + "\",\"center\":";
    put_row(s, {b.cx, b.cy, b.cz});
    s += ",\"size\":";
    put_row(s, {b.l, b.w, b.h});
    s += ",\"yaw\":";
    put_float(s, b.yaw);
    s += ",\"velocity\":";
    put_row(s, {b.velocity[0], b.velocity[1]});
    s += ",\"sparse\":";
    s += (i < f.sparse.size() && f.sparse[i]) ? "true" : "false";
    s.push_back('}');
  }
  s += "]}\n";
  return s;
}

Frame frame_from_json(const std::string& text) {
  const json j = detail::parse_text(text, "frame");
  Frame f;
  const json& id = detail::require(j, "frame_id");
  if (!id.is_number_integer()) throw ParseError("field 'frame_id' must be an integer");
  f.frame_id = id.get<std::int64_t>();
  const auto ego = float_row<2>(detail::require(j, "ego_velocity"), "ego_velocity");
  f.ego_velocity = {ego[0], ego[1]};

  for (const json& row : array_field(j, "radar")) {
    const auto r = float_row<6>(row, "radar");
    f.radar.push_back(RadarPoint{r[0], r[1], r[2], r[3], r[4], r[5]});
  }
  for (const json& row : array_field(j, "lidar")) {
    const auto r = float_row<4>(row, "lidar");
    f.lidar.push_back(LidarPoint{r[0], r[1], r[2], r[3]});
  }
  for (const json& lab : array_field(j, "labels")) {
    Box3D b;
    const json& cls = detail::require(lab, "class", "labels[]");
    if (!cls.is_string()) throw ParseError("field 'labels[].class' must be a string");
    b.class_id = class_from_name(cls.get<std::string>());
    const auto c = float_row<3>(detail::require(lab, "center", "labels[]"), "labels[].center");
    const auto sz = float_row<3>(detail::require(lab, "size", "labels[]"), "labels[].size");
    const auto v = float_row<2>(detail::require(lab, "velocity", "labels[]"), "labels[].velocity");
    b.cx = c[0];
    b.cy = c[1];
    b.cz = c[2];
    b.l = sz[0];
    b.w = sz[1];
    b.h = sz[2];
    if (!(b.l > 0 && b.w > 0 && b.h > 0)) throw ParseError("field 'labels[].size' must be positive");
    b.yaw = as_float(detail::require(lab, "yaw", "labels[]"), "labels[].yaw");
    b.velocity = {v[0], v[1]};
    bool sparse = false;
    detail::maybe(lab, "sparse", sparse, "labels[]");
    f.labels.push_back(b);
    f.sparse.push_back(sparse ? 1 : 0);
  }
  return f;
}

void write_frame(const std::filesystem::path& path, const Frame& frame) { write_text(path, frame_to_json(frame)); }

Frame read_frame(const std::filesystem::path& path) {
  try {
    return frame_from_json(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  }
}

std::string frame_checksum(const Frame& frame) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : frame_to_json(frame)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string frame_filename(std::int64_t frame_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.json", static_cast<long long>(frame_id));
  return buf;
}

DatasetManifest write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t frames,
                              std::size_t val_frames) {
  if (val_frames > frames) throw ConfigError("validation split larger than the dataset");
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.seed = spec.seed;
  m.spec_json = scene_spec_to_json(spec);
  for (std::size_t i = 0; i < frames; ++i) {
    const auto id = static_cast<std::int64_t>(i);
    const Frame f = generate_frame(spec, id);
    write_frame(dir / frame_filename(id), f);
    m.checksums[id] = frame_checksum(f);
    (i < frames - val_frames ? m.train : m.val).push_back(id);
  }
  json checks = json::object();
  for (const auto& [id, sum] : m.checksums) checks[frame_filename(id)] = sum;
  const json doc = {{"format", "rlf-dataset-1"}, {"seed", m.seed},
                    {"train", m.train},          {"val", m.val},
                    {"spec", json::parse(m.spec_json)}, {"checksums", checks}};
  write_text(dir / "manifest.json", doc.dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const json j = detail::parse_text(read_text(dir / "manifest.json"), "manifest.json");
  DatasetManifest m;
  m.seed = detail::get_as<std::uint64_t>(detail::require(j, "seed", "manifest"), "seed");
  m.train = detail::get_as<std::vector<std::int64_t>>(detail::require(j, "train", "manifest"), "train");
  m.val = detail::get_as<std::vector<std::int64_t>>(detail::require(j, "val", "manifest"), "val");
  m.spec_json = detail::require(j, "spec", "manifest").dump(2);
  if (j.contains("checksums")) {
    for (const auto& [name, sum] : j["checksums"].items()) {
      m.checksums[std::stoll(name)] = detail::get_as<std::string>(sum, "checksums." + name);
    }
  }
  return m;
}

std::vector<Frame> read_split(const std::filesystem::path& dir, const std::vector<std::int64_t>& ids) {
  std::vector<Frame> out;
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(read_frame(dir / frame_filename(id)));
  return out;
}

}  // namespace rlf::synth
