// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xaiens/common.hpp"

namespace xaiens {

// Flat typed key-value configuration with INI-style sections. Keys flatten
// to "section.key"; the canonical sorted form feeds the config digest that
// threads provenance through every emitted artifact.
class Config {
 public:
  Config() = default;
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-split

  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string canonical() const;
  std::string digest() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace xaiens
