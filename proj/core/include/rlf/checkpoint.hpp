#pragma once

#include <filesystem>
#include <string>

#include "rlf/parameters.hpp"

namespace rlf {

// Checkpoint = `<stem>.json` manifest (name, shape, dtype, byte offset per
// parameter) + `<stem>.bin` little-endian float32 blob in manifest order.
void save_checkpoint(const std::filesystem::path& manifest_path, const ParameterStore& params,
                     const std::string& extra_json = "{}");

// Loads into an existing store whose shapes define the model. Any missing,
// extra or shape-mismatched parameter fails with LoadError listing them all.
void load_checkpoint(const std::filesystem::path& manifest_path, ParameterStore& params);

// Returns the `extra` object stored alongside the parameters, serialized.
std::string checkpoint_extra(const std::filesystem::path& manifest_path);

}  // namespace rlf
