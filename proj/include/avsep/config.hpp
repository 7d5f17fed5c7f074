#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "avsep/io.hpp"

namespace avsep {

// Flat key=value settings with a fixed schema per command. Values stay
// strings until read; unknown keys fail loudly so a stale config cannot
// silently lose meaning. The effective map round-trips through
// `config.resolved`, which alone reproduces the run.
class FlatConfig {
 public:
  explicit FlatConfig(std::map<std::string, std::string> defaults)
      : values_(std::move(defaults)) {}

  void load_file(const std::string& path) {
    for (const auto& [k, v] : read_kv_file(path)) set(k, v);
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key: " + key);
    it->second = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key: " + key);
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " is not a number: '" + v + "'");
    }
  }

  std::size_t count(const std::string& key) const {
    double x = num(key);
    if (x < 0 || x != double(std::size_t(x)))
      throw ConfigError("key " + key + " is not a non-negative integer");
    return std::size_t(x);
  }

  std::uint64_t uint(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      std::uint64_t x = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " is not an unsigned integer: '" + v +
                        "'");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("key " + key + " is not a boolean: '" + v + "'");
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  void write_resolved(const std::string& path) const {
    write_kv_file(path, values_);
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace avsep
