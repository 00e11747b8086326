// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lafr::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dotted-key settings with a fixed schema. Every key has a default; unknown
/// keys are rejected wherever they come from.
class RunConfig {
 public:
  RunConfig();

  static const std::map<std::string, std::string>& defaults();

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value);

  std::string get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  std::uint64_t seed() const { return get_u64("seed"); }
  std::filesystem::path output_dir() const { return get("output_dir"); }

  /// `key = value` lines; blank lines and `#` comments are skipped.
  void merge_text(const std::string& text, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  /// LAFR_<KEY> with dots as underscores, upper case.
  void merge_environment();
  /// `key=value` strings from the command line.
  void merge_overrides(const std::vector<std::string>& assignments);

  /// Sorted `key = value` lines, one per key.
  std::string serialize() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  static std::string environment_name(const std::string& key);

 private:
  std::map<std::string, std::string> values_;
};

/// Exclusive writer lock on an output directory (O_EXCL lockfile). Released
/// on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Writes via a sibling temp file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace lafr::harness
