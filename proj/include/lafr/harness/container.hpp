// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "lafr/nn/parameter.hpp"

namespace lafr::harness {

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ElementType : std::uint8_t { kF32 = 0, kU8 = 1 };

struct NamedArray {
  std::string name;
  ElementType type = ElementType::kF32;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const;
};

/// "LAFR" | u16 version | u32 count | records | u32 CRC32 of everything
/// before it. Record: u16 name length, name, u8 type, u8 rank, u32 dims,
/// little-endian payload.
class NamedArrayContainer {
 public:
  static constexpr std::uint16_t kVersion = 1;

  void add_f32(const std::string& name, std::vector<std::uint32_t> dims, std::vector<float> values);
  void add_bytes(const std::string& name, const std::string& bytes);
  void add_u64(const std::string& name, std::uint64_t value);

  bool contains(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;
  std::string get_bytes(const std::string& name) const;
  std::uint64_t get_u64(const std::string& name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  std::string serialize() const;
  static NamedArrayContainer deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static NamedArrayContainer load(const std::filesystem::path& path);

  /// Stores every parameter under its name with its dims.
  void add_parameters(const std::vector<const nn::Parameter<float>*>& params);
  /// Copies stored values into matching parameters; throws when a
  /// parameter is missing or has a different shape.
  void load_parameters(const std::vector<nn::Parameter<float>*>& params) const;

 private:
  void add(NamedArray array);
  std::vector<NamedArray> arrays_;
};

}  // namespace lafr::harness
