// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/harness/container.hpp"

#include <zlib.h>

#include <cstring>
#include <map>

#include "lafr/harness/config.hpp"

namespace lafr::harness {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'F', 'R'};

template <typename T>
void put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T take() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw ContainerError("container truncated at byte " + std::to_string(pos_));
  }
  const std::string& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

}  // namespace

std::size_t NamedArray::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void NamedArrayContainer::add(NamedArray array) {
  if (array.name.empty() || array.name.size() > 0xffff) throw ContainerError("bad array name length");
  if (array.dims.size() > 0xff) throw ContainerError("too many dims for " + array.name);
  if (contains(array.name)) throw ContainerError("duplicate array name '" + array.name + "'");
  arrays_.push_back(std::move(array));
}

void NamedArrayContainer::add_f32(const std::string& name, std::vector<std::uint32_t> dims,
                                  std::vector<float> values) {
  NamedArray a;
  a.name = name;
  a.type = ElementType::kF32;
  a.dims = std::move(dims);
  if (a.element_count() != values.size()) {
    throw ContainerError("array '" + name + "' dims do not match " + std::to_string(values.size()) + " values");
  }
  a.f32 = std::move(values);
  add(std::move(a));
}

void NamedArrayContainer::add_bytes(const std::string& name, const std::string& bytes) {
  NamedArray a;
  a.name = name;
  a.type = ElementType::kU8;
  a.dims = {static_cast<std::uint32_t>(bytes.size())};
  a.u8.assign(bytes.begin(), bytes.end());
  add(std::move(a));
}

void NamedArrayContainer::add_u64(const std::string& name, std::uint64_t value) {
  std::string b;
  put<std::uint64_t>(b, value);
  add_bytes(name, b);
}

bool NamedArrayContainer::contains(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return true;
  return false;
}

const NamedArray& NamedArrayContainer::get(const std::string& name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return a;
  throw ContainerError("container has no array '" + name + "'");
}

std::string NamedArrayContainer::get_bytes(const std::string& name) const {
  const auto& a = get(name);
  if (a.type != ElementType::kU8) throw ContainerError("array '" + name + "' is not a byte array");
  return std::string(a.u8.begin(), a.u8.end());
}

std::uint64_t NamedArrayContainer::get_u64(const std::string& name) const {
  const std::string b = get_bytes(name);
  if (b.size() != 8) throw ContainerError("array '" + name + "' is not a u64");
  Reader r(b, b.size());
  return r.take<std::uint64_t>();
}

std::string NamedArrayContainer::serialize() const {
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.type));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) put<std::uint32_t>(out, d);
    if (a.type == ElementType::kF32) {
      for (float f : a.f32) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put<std::uint32_t>(out, bits);
      }
    } else {
      out.append(a.u8.begin(), a.u8.end());
    }
  }
  put<std::uint32_t>(out, crc_of(out, out.size()));
  return out;
}

NamedArrayContainer NamedArrayContainer::deserialize(const std::string& bytes) {
  if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ContainerError("not a LAFR container");
  }
  const std::size_t body = bytes.size() - 4;
  const std::string crc_bytes = bytes.substr(body);
  const auto stored = Reader(crc_bytes, 4).take<std::uint32_t>();
  if (stored != crc_of(bytes, body)) throw ContainerError("container CRC mismatch");

  Reader r(bytes, body);
  r.take_string(4);
  const auto version = r.take<std::uint16_t>();
  if (version != kVersion) throw ContainerError("unsupported container version " + std::to_string(version));
  const auto count = r.take<std::uint32_t>();
  NamedArrayContainer c;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.take_string(r.take<std::uint16_t>());
    const auto tag = r.take<std::uint8_t>();
    if (tag > 1) throw ContainerError("unknown element type " + std::to_string(tag));
    a.type = static_cast<ElementType>(tag);
    const auto rank = r.take<std::uint8_t>();
    for (int d = 0; d < rank; ++d) a.dims.push_back(r.take<std::uint32_t>());
    const std::size_t n = a.element_count();
    if (a.type == ElementType::kF32) {
      a.f32.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto bits = r.take<std::uint32_t>();
        std::memcpy(&a.f32[k], &bits, 4);
      }
    } else {
      const std::string s = r.take_string(n);
      a.u8.assign(s.begin(), s.end());
    }
    c.add(std::move(a));
  }
  if (r.pos() != body) throw ContainerError("trailing bytes in container");
  return c;
}

void NamedArrayContainer::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

NamedArrayContainer NamedArrayContainer::load(const std::filesystem::path& path) {
  try {
    return deserialize(read_file(path));
  } catch (const ContainerError& e) {
    throw ContainerError(path.string() + ": " + e.what());
  }
}

void NamedArrayContainer::add_parameters(const std::vector<const nn::Parameter<float>*>& params) {
  for (const auto* p : params) {
    std::vector<std::uint32_t> dims(p->dims.begin(), p->dims.end());
    add_f32(p->name, std::move(dims), std::vector<float>(p->value.begin(), p->value.end()));
  }
}

void NamedArrayContainer::load_parameters(const std::vector<nn::Parameter<float>*>& params) const {
  for (auto* p : params) {
    const auto& a = get(p->name);
    const std::vector<std::uint32_t> want(p->dims.begin(), p->dims.end());
    if (a.type != ElementType::kF32 || a.dims != want) {
      throw ContainerError("array '" + p->name + "' has the wrong shape");
    }
    p->value.assign(a.f32.begin(), a.f32.end());
  }
}

}  // namespace lafr::harness
