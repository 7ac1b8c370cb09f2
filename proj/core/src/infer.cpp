#include "rlf/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json_detail.hpp"
#include "rlf/errors.hpp"

namespace rlf::infer {

using detail::json;

std::string detection_json_line(std::int64_t frame_id, const Detection& d) {
  const Box3D& b = d.box;
  json j = {{"frame_id", frame_id}, {"class", class_name(b.class_id)}, {"score", d.score}, {"cx", b.cx},
            {"cy", b.cy},           {"cz", b.cz},                      {"l", b.l},         {"w", b.w},
            {"h", b.h},             {"yaw", b.yaw}};
  return j.dump();
}

void write_detections(std::ostream& out, const std::vector<train::FrameOutput>& outputs) {
  for (const auto& o : outputs) {
    for (const auto& d : o.prediction.detections) out << detection_json_line(o.frame_id, d) << '\n';
  }
}

std::map<std::int64_t, std::vector<Detection>> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open detections file " + path.string());
  std::map<std::int64_t, std::vector<Detection>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    try {
      const json j = detail::parse_text(line, where);
      Detection d;
      const auto id = detail::get_as<std::int64_t>(detail::require(j, "frame_id"), "frame_id");
      d.box.class_id = class_from_name(detail::get_as<std::string>(detail::require(j, "class"), "class"));
      d.score = detail::get_as<double>(detail::require(j, "score"), "score");
      d.box.cx = detail::get_as<double>(detail::require(j, "cx"), "cx");
      d.box.cy = detail::get_as<double>(detail::require(j, "cy"), "cy");
      d.box.cz = detail::get_as<double>(detail::require(j, "cz"), "cz");
      d.box.l = detail::get_as<double>(detail::require(j, "l"), "l");
      d.box.w = detail::get_as<double>(detail::require(j, "w"), "w");
      d.box.h = detail::get_as<double>(detail::require(j, "h"), "h");
      d.box.yaw = detail::get_as<double>(detail::require(j, "yaw"), "yaw");
      if (!(d.box.l > 0 && d.box.w > 0 && d.box.h > 0)) throw ParseError("box sizes must be positive");
      out[id].push_back(d);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& plane) {
  if (plane.rank() != 2) throw DimensionError("write_pgm expects [H, W], got " + shape_str(plane.shape()));
  const std::size_t H = plane.dim(0), W = plane.dim(1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot write " + path.string());
  out << "P5\n" << W << ' ' << H << "\n255\n";
  std::string row(W, '\0');
  for (std::size_t r = H; r-- > 0;) {
    for (std::size_t c = 0; c < W; ++c) {
      const double v = std::clamp(plane.data()[r * W + c], 0.0, 1.0);
      row[c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(row.data(), static_cast<std::streamsize>(W));
  }
}

void write_heatmaps(const std::filesystem::path& dir, const std::string& stem, const Tensor& heat, double tau) {
  if (heat.rank() != 3) throw DimensionError("write_heatmaps expects [N_cls, H, W], got " + shape_str(heat.shape()));
  std::filesystem::create_directories(dir);
  const std::size_t C = heat.dim(0), H = heat.dim(1), W = heat.dim(2);
  for (std::size_t c = 0; c < C; ++c) {
    Tensor plane({H, W}), mask({H, W});
    for (std::size_t i = 0; i < H * W; ++i) {
      plane.storage()[i] = heat.data()[c * H * W + i];
      mask.storage()[i] = plane.storage()[i] >= tau ? 1.0 : 0.0;
    }
    const std::string base = stem + "_" + std::string(class_name(static_cast<int>(c)));
    write_pgm(dir / (base + "_heat.pgm"), plane);
    write_pgm(dir / (base + "_mask.pgm"), mask);
  }
}

}  // namespace rlf::infer
