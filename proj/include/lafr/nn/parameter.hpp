// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "lafr/nn/tensor.hpp"
#include "lafr/random.hpp"

namespace lafr::nn {

template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  AlignedVector<T> value;
  AlignedVector<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> d) : name(std::move(n)), dims(std::move(d)) {
    std::size_t count = 1;
    for (int x : dims) count *= static_cast<std::size_t>(x);
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Order-sensitive FNV-1a over names and raw value bytes.
template <typename T>
std::uint64_t checksum(const std::vector<const Parameter<T>*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto* p : params) {
    h = fnv1a64(p->name, h);
    const auto* bytes = reinterpret_cast<const char*>(p->value.data());
    h = fnv1a64(std::string_view(bytes, p->value.size() * sizeof(T)), h);
  }
  return h;
}

template <typename T>
std::size_t count_values(const std::vector<const Parameter<T>*>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

template <typename T>
void fill_normal(Parameter<T>& p, Rng& rng, double stddev) {
  for (auto& v : p.value) v = static_cast<T>(normal(rng) * stddev);
}

template <typename T>
void fill_uniform(Parameter<T>& p, Rng& rng, double bound) {
  for (auto& v : p.value) v = static_cast<T>(uniform(rng, -bound, bound));
}

}  // namespace lafr::nn
