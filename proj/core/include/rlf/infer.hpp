#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "rlf/box.hpp"
#include "rlf/tensor.hpp"
#include "rlf/train.hpp"

namespace rlf::infer {

// {frame_id, class, score, cx, cy, cz, l, w, h, yaw}
std::string detection_json_line(std::int64_t frame_id, const Detection& det);
void write_detections(std::ostream& out, const std::vector<train::FrameOutput>& outputs);
// Reads a JSON-lines detection file. Blank lines are skipped; ParseError
// names the line and field on malformed input.
std::map<std::int64_t, std::vector<Detection>> read_detections(const std::filesystem::path& path);

// 8-bit binary PGM of a [H, W] plane with values clamped to [0, 1]. The top
// image row is the largest grid row (+y up).
void write_pgm(const std::filesystem::path& path, const Tensor& plane);

// Per class: <stem>_<class>_heat.pgm and <stem>_<class>_mask.pgm (G >= tau).
void write_heatmaps(const std::filesystem::path& dir, const std::string& stem, const Tensor& heat, double tau);

}  // namespace rlf::infer
