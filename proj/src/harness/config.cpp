// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/harness/config.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lafr::harness {

namespace fs = std::filesystem;

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> d = {
      {"seed", "7"},
      {"output_dir", "runs/default"},

      {"data.image_size", "64"},
      {"data.corpus_size", "2000"},
      {"data.train_size", "600"},
      {"data.eval_size", "64"},
      {"data.codec_size", "512"},
      {"data.scale_factor", "4"},
      {"data.blur_sigma_max", "3.0"},
      {"data.noise_sigma_max", "0.08"},
      {"data.jpeg_quality_min", "40"},
      {"data.jpeg_quality_max", "95"},

      {"optim.beta1", "0.9"},
      {"optim.beta2", "0.999"},
      {"optim.epsilon", "1e-8"},

      {"codec.latent_channels", "4"},
      {"codec.stride", "4"},
      {"codec.hidden_widths", "24,48"},
      {"codec.learning_rate", "1.2e-3"},
      {"codec.batch_size", "2"},
      {"codec.epochs", "10"},
      {"codec.max_final_loss", "3e-3"},

      {"prior.width", "32"},
      {"prior.learning_rate", "1e-3"},
      {"prior.batch_size", "8"},
      {"prior.steps", "1500"},
      {"prior.max_sigma", "0.5"},

      {"adapter.codebook_size", "256"},
      {"adapter.code_dim", "16"},
      {"adapter.hidden", "64"},
      {"adapter.kernel_size", "5"},
      {"adapter.feature_upsample", "2"},
      {"adapter.beta", "0.25"},

      {"stage1.learning_rate", "1e-3"},
      {"stage1.batch_size", "16"},
      {"stage1.epochs", "100"},
      {"stage1.lr_floor_fraction", "1.0"},

      {"stage2.learning_rate", "5e-5"},
      {"stage2.batch_size", "2"},
      {"stage2.total_steps", "2000"},
      {"stage2.lora_rank", "4"},
      {"stage2.lora_alpha", "4"},
      {"stage2.lora_target", "conv"},
      {"stage2.prune", "true"},
      {"stage2.align", "true"},
      {"stage2.prompt", "face, high quality"},

      {"loss.lambda_lpips", "2"},
      {"loss.lambda_res", "1"},
      {"loss.lambda_id", "1"},
      {"loss.lambda_fs", "1"},
      {"loss.id_variant", "cosine"},
      {"loss.fs_variant", "cosine"},

      {"eval.no_adapter", "true"},
      {"eval.save_images", "8"},

      {"sweep.sizes", "100,300,600"},

      {"diagnose.corpus_size", "64"},
  };
  return d;
}

RunConfig::RunConfig() : values_(defaults()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!defaults().count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

std::string RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

namespace {

template <typename T, typename F>
T parse_whole(const std::string& key, const std::string& text, F parse) {
  std::size_t used = 0;
  T v{};
  try {
    v = parse(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (text.empty() || used != text.size()) {
    throw ConfigError("config key '" + key + "' has invalid value '" + text + "'");
  }
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::int64_t RunConfig::get_int(const std::string& key) const {
  return parse_whole<std::int64_t>(key, get(key), [](const std::string& s, std::size_t* n) { return std::stoll(s, n); });
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string v = get(key);
  if (!v.empty() && v[0] == '-') throw ConfigError("config key '" + key + "' must be non-negative");
  return parse_whole<std::uint64_t>(key, v, [](const std::string& s, std::size_t* n) { return std::stoull(s, n); });
}

double RunConfig::get_double(const std::string& key) const {
  return parse_whole<double>(key, get(key), [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
}

bool RunConfig::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' must be a boolean, got '" + get(key) + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(
        parse_whole<long>(key, item, [](const std::string& s, std::size_t* n) { return std::stol(s, n); })));
  }
  return out;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    try {
      set(key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::merge_file(const fs::path& path) { merge_text(read_file(path), path.string()); }

std::string RunConfig::environment_name(const std::string& key) {
  std::string name = "LAFR_";
  for (char c : key) name.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return name;
}

void RunConfig::merge_environment() {
  for (const auto& [key, _] : defaults()) {
    if (const char* v = std::getenv(environment_name(key).c_str())) values_[key] = v;
  }
}

void RunConfig::merge_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw std::runtime_error("output directory " + dir.string() + " is locked by another writer (" +
                               path_.string() + ")");
    }
    throw std::runtime_error("cannot lock " + dir.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace lafr::harness
