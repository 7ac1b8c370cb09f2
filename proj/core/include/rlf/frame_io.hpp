#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rlf/synth.hpp"

namespace rlf::synth {

// One JSON document per frame:
//   {"frame_id", "ego_velocity":[vx,vy], "radar":[[x,y,z,vr,va,rcs],...],
//    "lidar":[[x,y,z,i],...], "labels":[{"class","center":[x,y,z],
//    "size":[l,w,h],"yaw","velocity":[vx,vy],"sparse"}]}
// "sparse" is optional on read and defaults to false.
// Numbers are written as shortest round-trip 32-bit floats.
std::string frame_to_json(const Frame& frame);
// ParseError naming the offending field on malformed input.
Frame frame_from_json(const std::string& text);

void write_frame(const std::filesystem::path& path, const Frame& frame);
Frame read_frame(const std::filesystem::path& path);

// FNV-1a 64 of the canonical serialization, hex encoded.
std::string frame_checksum(const Frame& frame);

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::string spec_json = "{}";
  std::map<std::int64_t, std::string> checksums;
};

std::string frame_filename(std::int64_t frame_id);  // NNNNNN.json

// Directory of NNNNNN.json frames plus manifest.json.
DatasetManifest write_dataset(const std::filesystem::path& dir, const SceneSpec& spec, std::size_t frames,
                              std::size_t val_frames);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<Frame> read_split(const std::filesystem::path& dir, const std::vector<std::int64_t>& ids);

}  // namespace rlf::synth
