#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "nvnmr/error.hpp"
#include "nvnmr/spin_core.hpp"

// Small readers for validated JSON input. Every failure is a ConfigError
// carrying the dotted path of the offending key.
namespace nvnmr::json_fields {

using Json = nlohmann::json;

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}
inline std::string join(const std::string& path, std::size_t index) {
  return path + "[" + std::to_string(index) + "]";
}

inline void expect_object(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
}

inline void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  expect_object(j, path);
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(join(path, it.key()), "unknown key");
  }
}

inline const Json& require(const Json& j, const char* key, const std::string& path) {
  expect_object(j, path);
  const auto it = j.find(key);
  if (it == j.end()) throw ConfigError(join(path, key), "missing required key");
  return *it;
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  return j.get<double>();
}

inline double number_or(const Json& j, const char* key, double fallback, const std::string& path) {
  const auto it = j.find(key);
  return it == j.end() ? fallback : number(*it, join(path, key));
}

inline long long integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
  return j.get<long long>();
}

inline std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a string");
  return j.get<std::string>();
}

inline bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
  return j.get<bool>();
}

inline Vector3 vector3(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(path, "expected an array of 3 numbers");
  return Vector3(number(j[0], join(path, 0)), number(j[1], join(path, 1)), number(j[2], join(path, 2)));
}

inline Matrix3 matrix3(const Json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(path, "expected a 3x3 array");
  Matrix3 m;
  for (std::size_t r = 0; r < 3; ++r) m.row(static_cast<Eigen::Index>(r)) = vector3(j[r], join(path, r));
  return m;
}

inline nlohmann::ordered_json to_json(const Vector3& v) { return {v.x(), v.y(), v.z()}; }
inline nlohmann::ordered_json to_json(const Matrix3& m) {
  return {to_json(Vector3(m.row(0))), to_json(Vector3(m.row(1))), to_json(Vector3(m.row(2)))};
}

}  // namespace nvnmr::json_fields
