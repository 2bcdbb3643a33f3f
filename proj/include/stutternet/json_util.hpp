#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stutternet/error.hpp"

namespace stutternet::detail {

/// Rejects keys of `obj` outside `allowed`; `where` names the object in errors.
inline void require_known_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                               std::string_view where) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected a JSON object");
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (auto key : allowed) ok = ok || key == item.key();
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + item.key() + "'");
  }
}

/// Reads `obj[key]` into `out` when present, with type errors mapped to ConfigError.
template <class T>
void read_optional(const nlohmann::json& obj, const char* key, T& out, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(where) + "." + key + ": " + e.what());
  }
}

}  // namespace stutternet::detail
