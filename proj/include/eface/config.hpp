#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "eface/detector.hpp"

namespace eface {

// Flat "dotted.key=value" settings, one per line. '#' starts a comment.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void erase(const std::string& key) { values_.erase(key); }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::string* find(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Overlay: keys in `other` replace ours.
  void merge(const KeyValueConfig& other);

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string text() const;

 private:
  std::map<std::string, std::string> values_;
};

// Unknown keys are rejected so typos do not pass silently.
DetectorConfig detector_config_from(const KeyValueConfig& kv);
KeyValueConfig to_key_values(const DetectorConfig& cfg);

}  // namespace eface
