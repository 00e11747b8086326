// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lafr {

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  bool operator==(const ManifestEntry&) const = default;
};

/// Ordered dataset listing. Serialized as a `# split=<s> seed=<n>` header
/// followed by one `id<TAB>relative_path` line per entry.
struct DatasetManifest {
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  /// Throws on duplicate ids.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

std::string format_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Uniform sample of n entries without replacement, kept in original order.
DatasetManifest sample_training_subset(const DatasetManifest& manifest, std::size_t n, std::uint64_t seed);

}  // namespace lafr
