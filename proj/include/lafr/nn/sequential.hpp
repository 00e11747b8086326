// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <vector>

#include "lafr/nn/layers.hpp"

namespace lafr::nn {

template <typename T>
class Sequential {
 public:
  /// activations[0] is the input, activations[i + 1] the output of layer i.
  struct Trace {
    std::vector<Tensor<T>> activations;
    const Tensor<T>& output() const { return activations.back(); }
  };

  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& layer : layers_) h = layer->forward(h);
    return h;
  }

  Trace trace(const Tensor<T>& x) const {
    Trace t;
    t.activations.reserve(layers_.size() + 1);
    t.activations.push_back(x);
    for (const auto& layer : layers_) t.activations.push_back(layer->forward(t.activations.back()));
    return t;
  }

  Tensor<T> backward(const Trace& t, const Tensor<T>& dy, bool want_dx = true) {
    Tensor<T> g = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      const bool need = want_dx || i > 0;
      g = layers_[i]->backward(t.activations[i], t.activations[i + 1], g, need);
    }
    return g;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& layer : layers_) layer->collect(out);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& layer : layers_) layer->collect(out);
    return out;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace lafr::nn
