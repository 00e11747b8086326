// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lafr/nn/parameter.hpp"
#include "lafr/nn/tensor.hpp"

namespace lafr::nn {

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }

  virtual Tensor<T> forward(const Tensor<T>& x) const = 0;

  /// Accumulates gradients of trainable parameters and, when `want_dx`, returns
  /// the gradient w.r.t. `x`. `y` must be the output forward(x) produced.
  virtual Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, bool want_dx) = 0;

  virtual void collect(std::vector<Parameter<T>*>& /*out*/) {}
  virtual void collect(std::vector<const Parameter<T>*>& /*out*/) const {}

 private:
  std::string name_;
};

/// Low-rank update attached to a weight layer: W + (alpha / rank) * B * A.
template <typename T>
struct LoraAdapter {
  Parameter<T> a;  // rank x fan_in
  Parameter<T> b;  // out x rank, zero at attach time
  int rank = 0;
  T alpha = T(0);
  std::string target_layer;

  T scale() const { return alpha / static_cast<T>(rank); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
};

/// 2-D convolution with zero padding kernel/2. Also serves as a linear layer
/// (kernel 1 on C x 1 x 1 inputs). Kernels are matrices over flattened patches.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  using Matrix = typename Tensor<T>::Matrix;
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;

  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
         double gain = 1.0)
      : Layer<T>(std::move(name)),
        in_(in_channels),
        out_(out_channels),
        kernel_(kernel),
        stride_(stride),
        pad_(kernel / 2),
        weight_(this->name() + ".weight", {out_channels, in_channels, kernel, kernel}),
        bias_(this->name() + ".bias", {out_channels}) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1 || stride < 1) {
      throw std::invalid_argument("conv " + this->name() + ": invalid geometry");
    }
    fill_normal(weight_, rng, gain / std::sqrt(static_cast<double>(fan_in())));
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  int fan_in() const { return in_ * kernel_ * kernel_; }

  Parameter<T>& weight() { return weight_; }
  const Parameter<T>& weight() const { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& bias() const { return bias_; }

  void set_trainable(bool on) {
    weight_.trainable = on;
    bias_.trainable = on;
  }

  Shape output_shape(const Shape& in) const {
    if (in.channels != in_) {
      throw ShapeError("conv " + this->name() + ": expected " + std::to_string(in_) + " channels, got " +
                       in.str());
    }
    return {out_, (in.height + 2 * pad_ - kernel_) / stride_ + 1, (in.width + 2 * pad_ - kernel_) / stride_ + 1};
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    const Shape os = output_shape(x.shape());
    Tensor<T> y(os);
    auto ym = y.matrix();
    const Matrix cols_store = needs_im2col() ? im2col(x, os) : Matrix();
    const auto run = [&](const auto& cols) {
      ym.noalias() = weight_matrix() * cols;
      if (lora_) {
        const Matrix projected = lora_a() * cols;
        ym.noalias() += lora_->scale() * (lora_b() * projected);
      }
    };
    if (needs_im2col()) {
      run(cols_store);
    } else {
      run(x.matrix());
    }
    for (int o = 0; o < out_; ++o) ym.row(o).array() += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, bool want_dx) override {
    const Shape os = y.shape();
    const auto dym = dy.matrix();
    const Matrix cols_store = needs_im2col() ? im2col(x, os) : Matrix();
    Tensor<T> dx;
    const auto run = [&](const auto& cols) {
      if (weight_.trainable) {
        MatMap(weight_.grad.data(), out_, fan_in()).noalias() += dym * cols.transpose();
        for (int o = 0; o < out_; ++o) bias_.grad[o] += dym.row(o).sum();
      }
      Matrix lora_dy;  // B^T dY, rank x positions
      if (lora_) {
        lora_dy.noalias() = lora_b().transpose() * dym;
        if (lora_->b.trainable) {
          const Matrix projected = lora_a() * cols;
          MatMap(lora_->b.grad.data(), out_, lora_->rank).noalias() += lora_->scale() * (dym * projected.transpose());
        }
        if (lora_->a.trainable) {
          MatMap(lora_->a.grad.data(), lora_->rank, fan_in()).noalias() +=
              lora_->scale() * (lora_dy * cols.transpose());
        }
      }
      if (!want_dx) return;
      Matrix dcols = weight_matrix().transpose() * dym;
      if (lora_) dcols.noalias() += lora_->scale() * (lora_a().transpose() * lora_dy);
      if (needs_im2col()) {
        dx = col2im(dcols, x.shape(), os);
      } else {
        dx = Tensor<T>(x.shape());
        dx.matrix() = dcols;
      }
    };
    if (needs_im2col()) {
      run(cols_store);
    } else {
      run(x.matrix());
    }
    return dx;
  }

  void collect(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
    if (lora_) {
      out.push_back(&lora_->a);
      out.push_back(&lora_->b);
    }
  }
  void collect(std::vector<const Parameter<T>*>& out) const override {
    out.push_back(&weight_);
    out.push_back(&bias_);
    if (lora_) {
      out.push_back(&lora_->a);
      out.push_back(&lora_->b);
    }
  }

  /// Attaches a fresh adapter: A ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), B = 0.
  LoraAdapter<T>& attach_lora(int rank, T alpha, Rng& rng) {
    if (rank < 1 || rank > std::min(fan_in(), out_)) {
      throw std::invalid_argument("lora rank " + std::to_string(rank) + " invalid for layer " + this->name() +
                                  " (" + std::to_string(fan_in()) + " -> " + std::to_string(out_) + ")");
    }
    LoraAdapter<T> adapter;
    adapter.a = Parameter<T>(this->name() + ".lora_a", {rank, fan_in()});
    adapter.b = Parameter<T>(this->name() + ".lora_b", {out_, rank});
    adapter.rank = rank;
    adapter.alpha = alpha;
    adapter.target_layer = this->name();
    fill_uniform(adapter.a, rng, 1.0 / std::sqrt(static_cast<double>(fan_in())));
    lora_ = std::move(adapter);
    return *lora_;
  }

  bool has_lora() const { return lora_.has_value(); }
  LoraAdapter<T>* lora() { return lora_ ? &*lora_ : nullptr; }
  const LoraAdapter<T>* lora() const { return lora_ ? &*lora_ : nullptr; }
  void detach_lora() { lora_.reset(); }

  /// W + scale * B * A as an out x fan_in matrix.
  Matrix merged_weight() const {
    Matrix w = weight_matrix();
    if (lora_) w.noalias() += lora_->scale() * (lora_b() * lora_a());
    return w;
  }

  /// Folds the adapter into the base weight and removes it.
  void merge_lora() {
    if (!lora_) return;
    const Matrix w = merged_weight();
    MatMap(weight_.value.data(), out_, fan_in()) = w;
    lora_.reset();
  }

 private:
  bool needs_im2col() const { return kernel_ != 1 || stride_ != 1; }

  ConstMatMap weight_matrix() const { return ConstMatMap(weight_.value.data(), out_, fan_in()); }
  ConstMatMap lora_a() const { return ConstMatMap(lora_->a.value.data(), lora_->rank, fan_in()); }
  ConstMatMap lora_b() const { return ConstMatMap(lora_->b.value.data(), out_, lora_->rank); }

  Matrix im2col(const Tensor<T>& x, const Shape& os) const {
    const int h = x.height();
    const int w = x.width();
    Matrix cols(fan_in(), static_cast<Eigen::Index>(os.plane()));
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          T* row = cols.row((c * kernel_ + ky) * kernel_ + kx).data();
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            T* dst = row + static_cast<std::size_t>(oy) * os.width;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + os.width, T(0));
              continue;
            }
            const T* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
    return cols;
  }

  Tensor<T> col2im(const Matrix& cols, const Shape& is, const Shape& os) const {
    Tensor<T> dx(is);
    const int h = is.height;
    const int w = is.width;
    for (int c = 0; c < in_; ++c) {
      for (int ky = 0; ky < kernel_; ++ky) {
        for (int kx = 0; kx < kernel_; ++kx) {
          const T* row = cols.row((c * kernel_ + ky) * kernel_ + kx).data();
          for (int oy = 0; oy < os.height; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= h) continue;
            const T* src = row + static_cast<std::size_t>(oy) * os.width;
            T* dst = dx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
            for (int ox = 0; ox < os.width; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              if (ix >= 0 && ix < w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
    return dx;
  }

  int in_;
  int out_;
  int kernel_;
  int stride_;
  int pad_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  std::optional<LoraAdapter<T>> lora_;
};

enum class ActivationKind { kSilu, kTanh, kLeakyRelu };

template <typename T>
class Activation : public Layer<T> {
 public:
  Activation(std::string name, ActivationKind kind) : Layer<T>(std::move(name)), kind_(kind) {}

  static T apply(ActivationKind kind, T v) {
    switch (kind) {
      case ActivationKind::kSilu:
        return v / (T(1) + std::exp(-v));
      case ActivationKind::kTanh:
        return std::tanh(v);
      case ActivationKind::kLeakyRelu:
        return v > T(0) ? v : T(0.2) * v;
    }
    return v;
  }

  static T derivative(ActivationKind kind, T x, T y) {
    switch (kind) {
      case ActivationKind::kSilu: {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      }
      case ActivationKind::kTanh:
        return T(1) - y * y;
      case ActivationKind::kLeakyRelu:
        return x > T(0) ? T(1) : T(0.2);
    }
    return T(1);
  }

  Tensor<T> forward(const Tensor<T>& x) const override {
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = apply(kind_, x[i]);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& dy, bool want_dx) override {
    if (!want_dx) return {};
    Tensor<T> dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * derivative(kind_, x[i], y[i]);
    return dx;
  }

 private:
  ActivationKind kind_;
};

/// Rearranges factor x factor spatial blocks into channels.
template <typename T>
class SpaceToDepth : public Layer<T> {
 public:
  SpaceToDepth(std::string name, int factor) : Layer<T>(std::move(name)), f_(factor) {}

  static Tensor<T> pack(const Tensor<T>& x, int f) {
    if (x.height() % f != 0 || x.width() % f != 0) {
      throw ShapeError("space_to_depth: " + x.shape().str() + " not divisible by " + std::to_string(f));
    }
    const int ho = x.height() / f;
    const int wo = x.width() / f;
    Tensor<T> y({x.channels() * f * f, ho, wo});
    for (int c = 0; c < x.channels(); ++c)
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const int oc = (c * f + dy) * f + dx;
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) y.at(oc, oy, ox) = x.at(c, oy * f + dy, ox * f + dx);
        }
    return y;
  }

  static Tensor<T> unpack(const Tensor<T>& y, int f) {
    if (y.channels() % (f * f) != 0) {
      throw ShapeError("depth_to_space: " + y.shape().str() + " channels not divisible by " + std::to_string(f * f));
    }
    const int c_out = y.channels() / (f * f);
    Tensor<T> x({c_out, y.height() * f, y.width() * f});
    for (int c = 0; c < c_out; ++c)
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const int ic = (c * f + dy) * f + dx;
          for (int oy = 0; oy < y.height(); ++oy)
            for (int ox = 0; ox < y.width(); ++ox) x.at(c, oy * f + dy, ox * f + dx) = y.at(ic, oy, ox);
        }
    return x;
  }

  Tensor<T> forward(const Tensor<T>& x) const override { return pack(x, f_); }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>& dy, bool want_dx) override {
    return want_dx ? unpack(dy, f_) : Tensor<T>();
  }

 private:
  int f_;
};

template <typename T>
class DepthToSpace : public Layer<T> {
 public:
  DepthToSpace(std::string name, int factor) : Layer<T>(std::move(name)), f_(factor) {}
  Tensor<T> forward(const Tensor<T>& x) const override { return SpaceToDepth<T>::unpack(x, f_); }
  Tensor<T> backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>& dy, bool want_dx) override {
    return want_dx ? SpaceToDepth<T>::pack(dy, f_) : Tensor<T>();
  }

 private:
  int f_;
};

/// Single-head self-attention over spatial positions with a residual
/// connection: y = x + V softmax(Q^T K / sqrt(C))^T, where [Q; K; V] comes from
/// one fused 1x1 projection named after the layer.
template <typename T>
class SelfAttention : public Layer<T> {
 public:
  using Matrix = typename Tensor<T>::Matrix;

  SelfAttention(std::string name, int channels, Rng& rng, double gain = 1.0)
      : Layer<T>(name), channels_(channels), qkv_(std::move(name), channels, 3 * channels, 1, 1, rng, gain) {}

  Conv2d<T>& projection() { return qkv_; }
  const Conv2d<T>& projection() const { return qkv_; }

  Tensor<T> forward(const Tensor<T>& x) const override {
    const Tensor<T> qkv = qkv_.forward(x);
    const Matrix probs = attention(qkv);
    Tensor<T> y = x;
    const auto v = qkv.matrix().middleRows(2 * channels_, channels_);
    y.matrix().noalias() += v * probs.transpose();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& x, const Tensor<T>&, const Tensor<T>& dy, bool want_dx) override {
    const Tensor<T> qkv = qkv_.forward(x);
    const Matrix probs = attention(qkv);
    const auto q = qkv.matrix().topRows(channels_);
    const auto k = qkv.matrix().middleRows(channels_, channels_);
    const auto v = qkv.matrix().middleRows(2 * channels_, channels_);
    const auto dout = dy.matrix();

    Tensor<T> dqkv(qkv.shape());
    auto dm = dqkv.matrix();
    dm.middleRows(2 * channels_, channels_).noalias() = dout * probs;
    Matrix dprobs = dout.transpose() * v;
    const Eigen::Matrix<T, Eigen::Dynamic, 1> row_dot = (dprobs.array() * probs.array()).rowwise().sum();
    Matrix dscores = probs.array() * (dprobs.colwise() - row_dot).array();
    dscores *= inv_sqrt();
    dm.topRows(channels_).noalias() = k * dscores.transpose();
    dm.middleRows(channels_, channels_).noalias() = q * dscores;

    Tensor<T> dx_proj = qkv_.backward(x, qkv, dqkv, want_dx);
    if (!want_dx) return {};
    dx_proj += dy;
    return dx_proj;
  }

  void collect(std::vector<Parameter<T>*>& out) override { qkv_.collect(out); }
  void collect(std::vector<const Parameter<T>*>& out) const override { qkv_.collect(out); }

 private:
  T inv_sqrt() const { return T(1) / std::sqrt(static_cast<T>(channels_)); }

  Matrix attention(const Tensor<T>& qkv) const {
    const auto q = qkv.matrix().topRows(channels_);
    const auto k = qkv.matrix().middleRows(channels_, channels_);
    Matrix scores = (q.transpose() * k) * inv_sqrt();
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      auto row = scores.row(i);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp();
      row /= row.sum();
    }
    return scores;
  }

  int channels_;
  Conv2d<T> qkv_;
};

}  // namespace lafr::nn
