// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace lafr::losses {

using nn::Activation;
using nn::ActivationKind;
using nn::Conv2d;

namespace {

constexpr double kNormEpsilon = 1e-10;

void require_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw nn::ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

}  // namespace

FeatureStack::FeatureStack(int image_channels, std::uint64_t seed) : channels_(image_channels) {
  if (image_channels < 1) throw std::invalid_argument("feature stack needs >= 1 input channel");
  Rng rng = make_rng(seed, "losses.feature-stack");
  const int widths[3] = {8, 16, 32};
  const int strides[3] = {1, 2, 2};
  int in = image_channels;
  for (int i = 0; i < 3; ++i) {
    auto& conv = net_.add<Conv2d<double>>("stack.conv" + std::to_string(i), in, widths[i], 3, strides[i], rng, 1.5);
    nn::fill_normal(conv.bias(), rng, 0.2);
    net_.add<Activation<double>>("stack.act" + std::to_string(i), ActivationKind::kTanh);
    in = widths[i];
  }
  for (auto* p : net_.parameters()) p->trainable = false;
}

std::vector<ImageTensor> FeatureStack::features(const ImageTensor& x) const {
  if (x.channels() != channels_) {
    throw nn::ShapeError("feature stack expects " + std::to_string(channels_) + " channels, got " + x.shape().str());
  }
  const auto t = net_.trace(x);
  return {t.activations[2], t.activations[4], t.activations[6]};
}

ImageTensor FeatureStack::backward(const ImageTensor& x, const std::vector<ImageTensor>& grad_taps) const {
  if (grad_taps.size() != 3) throw std::invalid_argument("feature stack backward needs one gradient per tap");
  const auto t = net_.trace(x);
  ImageTensor g = grad_taps[2].size() ? grad_taps[2] : ImageTensor(t.activations[6].shape());
  for (std::size_t i = net_.size(); i-- > 0;) {
    g = net_.layer(i).backward(t.activations[i], t.activations[i + 1], g, true);
    if (i == 4 && grad_taps[1].size()) g += grad_taps[1];
    if (i == 2 && grad_taps[0].size()) g += grad_taps[0];
  }
  return g;
}

Eigen::VectorXd EmbeddingProvider::embed(const ImageTensor& x) const {
  Eigen::VectorXd r = raw(x);
  const double n = r.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::runtime_error(name() + " embedding has zero or non-finite norm");
  return r / n;
}

ImageTensor EmbeddingProvider::embed_backward(const ImageTensor& x, const Eigen::VectorXd& grad_embedding) const {
  const Eigen::VectorXd r = raw(x);
  const double n = r.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::runtime_error(name() + " embedding has zero or non-finite norm");
  const Eigen::VectorXd e = r / n;
  const Eigen::VectorXd grad_raw = (grad_embedding - e * e.dot(grad_embedding)) / n;
  return raw_backward(x, grad_raw);
}

Eigen::VectorXd IdentityProvider::raw(const ImageTensor& x) const {
  const ImageTensor deep = stack_.features(x).back();
  return deep.matrix().rowwise().mean().transpose();
}

ImageTensor IdentityProvider::raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const {
  const auto taps = stack_.features(x);
  ImageTensor g(taps.back().shape());
  const double inv = 1.0 / static_cast<double>(g.shape().plane());
  auto m = g.matrix();
  for (int c = 0; c < g.channels(); ++c) m.row(c).setConstant(grad_raw[c] * inv);
  return stack_.backward(x, {ImageTensor(), ImageTensor(), g});
}

Eigen::VectorXd LayoutProvider::raw(const ImageTensor& x) const {
  const ImageTensor deep = stack_.features(x).back();
  return Eigen::Map<const Eigen::VectorXd>(deep.data(), static_cast<Eigen::Index>(deep.size()));
}

ImageTensor LayoutProvider::raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const {
  const auto taps = stack_.features(x);
  ImageTensor g(taps.back().shape());
  std::copy(grad_raw.data(), grad_raw.data() + grad_raw.size(), g.data());
  return stack_.backward(x, {ImageTensor(), ImageTensor(), g});
}

namespace {

struct Gray {
  int h, w;
  std::vector<double> v;
  std::vector<double> weights;  // per input channel
};

Gray to_gray(const ImageTensor& x) {
  if (x.height() < StructureProvider::kCells || x.width() < StructureProvider::kCells) {
    throw nn::ShapeError("structure embedding needs images of at least 4x4, got " + x.shape().str());
  }
  Gray g{x.height(), x.width(), std::vector<double>(x.shape().plane(), 0.0), {}};
  if (x.channels() == 3) {
    g.weights = {0.299, 0.587, 0.114};
  } else {
    g.weights.assign(static_cast<std::size_t>(x.channels()), 1.0 / x.channels());
  }
  for (int c = 0; c < x.channels(); ++c) {
    const double wc = g.weights[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += wc * x.data()[c * g.v.size() + i];
  }
  return g;
}

struct Directions {
  double cos[StructureProvider::kBins];
  double sin[StructureProvider::kBins];
  Directions() {
    for (int b = 0; b < StructureProvider::kBins; ++b) {
      const double theta = 2.0 * std::numbers::pi * b / StructureProvider::kBins;
      cos[b] = std::cos(theta);
      sin[b] = std::sin(theta);
    }
  }
};

const Directions& directions() {
  static const Directions d;
  return d;
}

int cell_of(int y, int x, int h, int w) {
  constexpr int k = StructureProvider::kCells;
  return (y * k / h) * k + (x * k / w);
}

}  // namespace

Eigen::VectorXd StructureProvider::raw(const ImageTensor& x) const {
  const Gray g = to_gray(x);
  const auto& dir = directions();
  Eigen::VectorXd hist = Eigen::VectorXd::Constant(kCells * kCells * kBins, kFloor);
  for (int y = 0; y < g.h; ++y) {
    for (int xx = 0; xx < g.w; ++xx) {
      const double gx = g.v[y * g.w + std::min(xx + 1, g.w - 1)] - g.v[y * g.w + std::max(xx - 1, 0)];
      const double gy = g.v[std::min(y + 1, g.h - 1) * g.w + xx] - g.v[std::max(y - 1, 0) * g.w + xx];
      const int cell = cell_of(y, xx, g.h, g.w);
      for (int b = 0; b < kBins; ++b) {
        const double t = gx * dir.cos[b] + gy * dir.sin[b];
        if (t > 0.0) hist[cell * kBins + b] += t * t;
      }
    }
  }
  return hist;
}

ImageTensor StructureProvider::raw_backward(const ImageTensor& x, const Eigen::VectorXd& grad_raw) const {
  const Gray g = to_gray(x);
  const auto& dir = directions();
  std::vector<double> grad_gray(g.v.size(), 0.0);
  for (int y = 0; y < g.h; ++y) {
    for (int xx = 0; xx < g.w; ++xx) {
      const int xp = y * g.w + std::min(xx + 1, g.w - 1);
      const int xm = y * g.w + std::max(xx - 1, 0);
      const int yp = std::min(y + 1, g.h - 1) * g.w + xx;
      const int ym = std::max(y - 1, 0) * g.w + xx;
      const double gx = g.v[xp] - g.v[xm];
      const double gy = g.v[yp] - g.v[ym];
      const int cell = cell_of(y, xx, g.h, g.w);
      double dgx = 0.0;
      double dgy = 0.0;
      for (int b = 0; b < kBins; ++b) {
        const double t = gx * dir.cos[b] + gy * dir.sin[b];
        if (t > 0.0) {
          const double dt = 2.0 * t * grad_raw[cell * kBins + b];
          dgx += dt * dir.cos[b];
          dgy += dt * dir.sin[b];
        }
      }
      grad_gray[xp] += dgx;
      grad_gray[xm] -= dgx;
      grad_gray[yp] += dgy;
      grad_gray[ym] -= dgy;
    }
  }
  ImageTensor out(x.shape());
  for (int c = 0; c < x.channels(); ++c) {
    const double wc = g.weights[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < grad_gray.size(); ++i) out.data()[c * grad_gray.size() + i] = wc * grad_gray[i];
  }
  return out;
}

void LossWeights::validate() const {
  if (lambda_lpips < 0.0 || lambda_res < 0.0 || lambda_id < 0.0 || lambda_fs < 0.0) {
    throw std::invalid_argument("loss weights must be >= 0");
  }
}

double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  if (u.size() != v.size()) throw nn::ShapeError("cosine_distance: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (!(nu > 0.0) || !(nv > 0.0)) throw std::invalid_argument("cosine_distance: zero vector");
  const double c = std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
  return 1.0 - c;
}

double perceptual_distance(const ImageTensor& a, const ImageTensor& b, const FeatureStack& stack,
                           ImageTensor* grad_a) {
  require_same(a, b, "perceptual_distance");
  const auto fa = stack.features(a);
  const auto fb = stack.features(b);
  double total = 0.0;
  std::vector<ImageTensor> grads(fa.size());
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const auto ma = fa[l].matrix();
    const auto mb = fb[l].matrix();
    const Eigen::Index positions = ma.cols();
    const double inv_p = 1.0 / static_cast<double>(positions);
    if (grad_a) grads[l] = ImageTensor(fa[l].shape());
    double layer = 0.0;
    for (Eigen::Index p = 0; p < positions; ++p) {
      const Eigen::VectorXd va = ma.col(p);
      const double sa = std::sqrt(va.squaredNorm() + kNormEpsilon);
      const Eigen::VectorXd vb = mb.col(p);
      const double sb = std::sqrt(vb.squaredNorm() + kNormEpsilon);
      const Eigen::VectorXd u = va / sa - vb / sb;
      layer += u.squaredNorm();
      if (grad_a) {
        const Eigen::VectorXd du = 2.0 * inv_p * u;
        grads[l].matrix().col(p) = du / sa - va * (va.dot(du) / (sa * sa * sa));
      }
    }
    total += layer * inv_p;
  }
  if (grad_a) *grad_a = stack.backward(a, grads);
  return total;
}

double perceptual_distance(const Image& a, const Image& b, const FeatureStack& stack) {
  require_same_shape(a, b, "perceptual_distance");
  return perceptual_distance(to_tensor<double>(a), to_tensor<double>(b), stack);
}

double mse(const ImageTensor& a, const ImageTensor& b, ImageTensor* grad_a) {
  require_same(a, b, "mse");
  if (a.size() == 0) throw std::invalid_argument("mse: empty image");
  const double inv = 1.0 / static_cast<double>(a.size());
  if (grad_a) *grad_a = ImageTensor(a.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
    if (grad_a) (*grad_a)[i] = 2.0 * d * inv;
  }
  return acc * inv;
}

double reconstruction_loss(const ImageTensor& res, const ImageTensor& gt, const LossWeights& weights,
                           const FeatureStack& stack, ImageTensor* grad_res) {
  weights.validate();
  double loss = mse(res, gt, grad_res);
  if (weights.lambda_lpips > 0.0) {
    ImageTensor g;
    loss += weights.lambda_lpips * perceptual_distance(res, gt, stack, grad_res ? &g : nullptr);
    if (grad_res) {
      for (std::size_t i = 0; i < g.size(); ++i) (*grad_res)[i] += weights.lambda_lpips * g[i];
    }
  }
  return loss;
}

double reconstruction_loss(const Image& res, const Image& gt, const LossWeights& weights, const FeatureStack& stack) {
  require_same_shape(res, gt, "reconstruction_loss");
  return reconstruction_loss(to_tensor<double>(res), to_tensor<double>(gt), weights, stack);
}

double embedding_loss(const ImageTensor& res, const ImageTensor& gt, const EmbeddingProvider& provider,
                      EmbeddingDistance kind, ImageTensor* grad_res) {
  require_same(res, gt, "embedding_loss");
  const Eigen::VectorXd er = provider.embed(res);
  const Eigen::VectorXd eg = provider.embed(gt);
  double loss = 0.0;
  Eigen::VectorXd ge;
  if (kind == EmbeddingDistance::kCosine) {
    loss = cosine_distance(er, eg);
    ge = -eg;
  } else {
    loss = (er - eg).squaredNorm();
    ge = 2.0 * (er - eg);
  }
  if (grad_res) *grad_res = provider.embed_backward(res, ge);
  return loss;
}

double identity_loss(const Image& res, const Image& gt, const EmbeddingProvider& id_provider, EmbeddingDistance kind) {
  require_same_shape(res, gt, "identity_loss");
  return embedding_loss(to_tensor<double>(res), to_tensor<double>(gt), id_provider, kind);
}

double structure_loss(const Image& res, const Image& gt, const EmbeddingProvider& fs_provider,
                      EmbeddingDistance kind) {
  require_same_shape(res, gt, "structure_loss");
  return embedding_loss(to_tensor<double>(res), to_tensor<double>(gt), fs_provider, kind);
}

LossBreakdown total_loss(const ImageTensor& res, const ImageTensor& gt, const LossWeights& weights,
                         const LossProviders& providers, ImageTensor* grad_res) {
  weights.validate();
  LossBreakdown out;
  ImageTensor g_rec;
  ImageTensor g_id;
  ImageTensor g_fs;
  const bool want = grad_res != nullptr;
  out.reconstruction = reconstruction_loss(res, gt, weights, providers.stack,
                                           want && weights.lambda_res > 0.0 ? &g_rec : nullptr);
  out.identity = embedding_loss(res, gt, providers.identity, providers.identity_kind,
                                want && weights.lambda_id > 0.0 ? &g_id : nullptr);
  out.structure = embedding_loss(res, gt, providers.structure, providers.structure_kind,
                                 want && weights.lambda_fs > 0.0 ? &g_fs : nullptr);
  out.total = weights.lambda_res * out.reconstruction + weights.lambda_id * out.identity +
              weights.lambda_fs * out.structure;
  if (want) {
    *grad_res = ImageTensor(res.shape());
    const std::pair<const ImageTensor*, double> parts[] = {
        {&g_rec, weights.lambda_res}, {&g_id, weights.lambda_id}, {&g_fs, weights.lambda_fs}};
    for (const auto& [g, w] : parts) {
      if (g->size() == 0) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*grad_res)[i] += w * (*g)[i];
    }
  }
  return out;
}

LossBreakdown total_loss(const Image& res, const Image& gt, const LossWeights& weights,
                         const LossProviders& providers) {
  require_same_shape(res, gt, "total_loss");
  return total_loss(to_tensor<double>(res), to_tensor<double>(gt), weights, providers);
}

}  // namespace lafr::losses
