// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/data/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "lafr/random.hpp"

namespace lafr {

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + text + "'");
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (e.id.empty()) throw std::invalid_argument("manifest entry with empty id");
    if (!seen.insert(e.id).second) throw std::invalid_argument("duplicate manifest id '" + e.id + "'");
  }
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::ostringstream out;
  out << "# split=" << to_string(manifest.split) << " seed=" << manifest.seed << "\n";
  for (const auto& e : manifest.entries) out << e.id << '\t' << e.path << '\n';
  return out.str();
}

DatasetManifest parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) throw std::invalid_argument("manifest: missing header");
  DatasetManifest m;
  bool have_split = false;
  bool have_seed = false;
  std::istringstream header(line.substr(2));
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("manifest: bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "split") {
      m.split = parse_split(value);
      have_split = true;
    } else if (key == "seed") {
      m.seed = std::stoull(value);
      have_seed = true;
    }
  }
  if (!have_split || !have_seed) throw std::invalid_argument("manifest: header needs split and seed");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::invalid_argument("manifest: line without TAB: '" + line + "'");
    m.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  m.validate();
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  out << format_manifest(manifest);
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str());
}

DatasetManifest sample_training_subset(const DatasetManifest& manifest, std::size_t n, std::uint64_t seed) {
  if (n > manifest.size()) {
    throw std::invalid_argument("cannot sample " + std::to_string(n) + " entries from a manifest of " +
                                std::to_string(manifest.size()));
  }
  std::vector<std::size_t> order(manifest.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "subset"));
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(order.size() - 1)));
    std::swap(order[i], order[j]);
  }
  order.resize(n);
  std::sort(order.begin(), order.end());
  DatasetManifest out;
  out.split = manifest.split;
  out.seed = seed;
  out.entries.reserve(n);
  for (std::size_t idx : order) out.entries.push_back(manifest.entries[idx]);
  return out;
}

}  // namespace lafr
