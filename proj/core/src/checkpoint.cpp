#include "rlf/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>
#include <vector>

#include "rlf/errors.hpp"

namespace rlf {
namespace {

using nlohmann::json;

std::filesystem::path blob_path(const std::filesystem::path& manifest_path) {
  auto p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

void put_f32_le(std::vector<char>& out, float f) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_f32_le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

json read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open checkpoint manifest " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("malformed checkpoint manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& manifest_path, const ParameterStore& params,
                     const std::string& extra_json) {
  json manifest;
  manifest["format"] = "rlf-checkpoint-v1";
  manifest["blob"] = blob_path(manifest_path).filename().string();
  manifest["extra"] = json::parse(extra_json);
  json entries = json::array();
  std::vector<char> blob;
  for (const auto& [name, p] : params.items()) {
    const std::size_t offset = blob.size();
    for (double v : p.value.data()) put_f32_le(blob, static_cast<float>(v));
    entries.push_back({{"name", name},
                       {"shape", p.value.shape()},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"nbytes", blob.size() - offset}});
  }
  manifest["parameters"] = std::move(entries);

  std::ofstream bin(blob_path(manifest_path), std::ios::binary);
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!bin) throw std::runtime_error("failed writing " + blob_path(manifest_path).string());
  std::ofstream out(manifest_path);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing " + manifest_path.string());
}

void load_checkpoint(const std::filesystem::path& manifest_path, ParameterStore& params) {
  const json manifest = read_manifest(manifest_path);
  std::ifstream bin(manifest_path.parent_path() / manifest.value("blob", std::string()), std::ios::binary);
  if (!bin) throw LoadError("cannot open checkpoint blob for " + manifest_path.string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::vector<std::string> problems;
  std::map<std::string, const json*> by_name;
  for (const json& e : manifest.at("parameters")) by_name[e.at("name").get<std::string>()] = &e;

  for (const auto& [name, p] : params.items()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back(name + " (missing from checkpoint)");
      continue;
    }
    const auto shape = it->second->at("shape").get<Shape>();
    if (shape != p.value.shape()) {
      problems.push_back(name + " (checkpoint " + shape_str(shape) + ", model " + shape_str(p.value.shape()) + ")");
    }
    if (it->second->value("dtype", std::string()) != "float32") problems.push_back(name + " (dtype not float32)");
  }
  for (const auto& [name, _] : by_name) {
    if (!params.contains(name)) problems.push_back(name + " (not in model)");
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "checkpoint/model mismatch:";
    for (const auto& s : problems) os << "\n  " << s;
    throw LoadError(os.str());
  }
  for (auto& [name, p] : params.items()) {
    const json& e = *by_name.at(name);
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + 4 * p.value.size() > blob.size()) throw LoadError(name + ": blob truncated");
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = get_f32_le(blob.data() + offset + 4 * i);
  }
}

std::string checkpoint_extra(const std::filesystem::path& manifest_path) {
  return read_manifest(manifest_path).value("extra", json::object()).dump();
}

}  // namespace rlf
