#pragma once

// Strict reading helpers on top of nlohmann::json: unknown keys and wrong
// types become ConfigError with the full key path.

#include <initializer_list>
#include <set>
#include <string>

#include "json.hpp"
#include "scaled/error.hpp"

namespace scaled::jsonu {

using json = nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

/// Reads j[key] into `out` when present; type errors name the key.
template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + (where.empty() ? std::string(key) : where + "." + key) + "': " +
                      j.at(key).dump());
  }
}

}  // namespace scaled::jsonu
