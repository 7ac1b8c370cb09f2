#pragma once

#include <json.hpp>
#include <string>

#include "rlf/errors.hpp"

namespace rlf::detail {

using json = nlohmann::ordered_json;

inline const json& require(const json& j, const char* key, const std::string& where = "") {
  if (!j.is_object()) throw ParseError(where.empty() ? "expected a JSON object" : where + ": expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError("missing required key '" + (where.empty() ? "" : where + ".") + key + "'");
  return *it;
}

template <typename T>
T get_as(const json& j, const std::string& field) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ParseError("field '" + field + "' has the wrong type");
  }
}

// Overwrites `out` with j[key] when present.
template <typename T>
void maybe(const json& j, const char* key, T& out, const std::string& where = "") {
  if (!j.is_object()) return;
  auto it = j.find(key);
  if (it != j.end()) out = get_as<T>(*it, where.empty() ? std::string(key) : where + "." + key);
}

inline json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace rlf::detail
