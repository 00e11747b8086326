// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/adapter/alignment.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "lafr/nn/adam.hpp"

namespace lafr::adapter {

using nn::Activation;
using nn::ActivationKind;
using nn::Conv2d;

Codebook::Codebook(int size, int dim)
    : size_(size), dim_(dim), entries_("codebook.entries", {std::max(size, 0), std::max(dim, 0)}) {
  if (size < 1 || dim < 1) throw std::invalid_argument("codebook needs K >= 1 and d >= 1");
  usage_.assign(static_cast<std::size_t>(size), 0);
}

Codebook Codebook::random(int size, int dim, Rng& rng) {
  Codebook cb(size, dim);
  nn::fill_normal(cb.entries_, rng, 1.0 / std::sqrt(static_cast<double>(dim)));
  return cb;
}

std::uint64_t Codebook::total_queries() const { return std::accumulate(usage_.begin(), usage_.end(), std::uint64_t{0}); }

double Codebook::utilization() const {
  const auto used = std::count_if(usage_.begin(), usage_.end(), [](std::uint64_t c) { return c > 0; });
  return static_cast<double>(used) / static_cast<double>(size_);
}

namespace {

double exact_distance_sq(std::span<const float> f, std::span<const float> c) {
  double acc = 0.0;
  for (std::size_t j = 0; j < f.size(); ++j) {
    const double d = static_cast<double>(f[j]) - static_cast<double>(c[j]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

int find_nearest(std::span<const float> f, const Codebook& codebook, double* distance_sq) {
  if (static_cast<int>(f.size()) != codebook.dim()) {
    throw nn::ShapeError("query dimension " + std::to_string(f.size()) + " != codebook dimension " +
                         std::to_string(codebook.dim()));
  }
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int k = 0; k < codebook.size(); ++k) {
    const double d = exact_distance_sq(f, codebook.entry(k));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best < 0) throw std::invalid_argument("nearest-code query is not finite");
  if (distance_sq) *distance_sq = best_d;
  return best;
}

NearestCode nearest_code(std::span<const float> f, Codebook& codebook) {
  NearestCode out;
  out.index = find_nearest(f, codebook, &out.distance_sq);
  const auto e = codebook.entry(out.index);
  out.entry.assign(e.begin(), e.end());
  codebook.record_use(out.index);
  return out;
}

QuantizedMap quantize_map(const nn::TensorF& features, const Codebook& codebook) {
  if (features.channels() != codebook.dim()) {
    throw nn::ShapeError("feature channels " + std::to_string(features.channels()) + " != codebook dimension " +
                         std::to_string(codebook.dim()));
  }
  const auto n = static_cast<Eigen::Index>(features.shape().plane());
  const auto k = static_cast<Eigen::Index>(codebook.size());
  const auto d = static_cast<Eigen::Index>(codebook.dim());
  using Mat = nn::TensorF::Matrix;
  const Eigen::Map<const Mat> entries(codebook.entries().value.data(), k, d);
  const auto f = features.matrix();  // d x n

  const Eigen::VectorXf entry_norms = entries.rowwise().squaredNorm();
  const Eigen::RowVectorXf feat_norms = f.colwise().squaredNorm();
  Mat scores = entries * f;  // k x n
  const float max_entry_norm = entry_norms.maxCoeff();

  QuantizedMap out;
  out.quantized = nn::TensorF(features.shape());
  out.indices.resize(static_cast<std::size_t>(n));
  std::vector<float> column(static_cast<std::size_t>(d));
  std::vector<float> approx(static_cast<std::size_t>(k));
  for (Eigen::Index p = 0; p < n; ++p) {
    if (!std::isfinite(feat_norms[p])) throw std::invalid_argument("quantize_map: non-finite feature");
    float best_approx = std::numeric_limits<float>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
      approx[static_cast<std::size_t>(i)] = entry_norms[i] - 2.0f * scores(i, p);
      best_approx = std::min(best_approx, approx[static_cast<std::size_t>(i)]);
    }
    // Float expansion error is bounded well inside this margin.
    const float margin = 1e-4f * (feat_norms[p] + max_entry_norm) + 1e-6f;
    for (Eigen::Index j = 0; j < d; ++j) column[static_cast<std::size_t>(j)] = f(j, p);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
      if (approx[static_cast<std::size_t>(i)] > best_approx + margin) continue;
      const double dist = exact_distance_sq(column, codebook.entry(static_cast<int>(i)));
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<int>(i);
      }
    }
    out.indices[static_cast<std::size_t>(p)] = best;
    out.quantized.matrix().col(p) = entries.row(best).transpose();
  }
  return out;
}

QuantizedMap quantize_map(const nn::TensorF& features, Codebook& codebook, bool count_usage) {
  QuantizedMap out = quantize_map(features, std::as_const(codebook));
  if (count_usage) {
    for (int idx : out.indices) codebook.record_use(idx);
  }
  return out;
}

AlignmentAdapter::AlignmentAdapter(const AdapterConfig& config)
    : config_(config), codebook_(config.codebook_size, config.code_dim) {
  if (config.latent_channels < 1 || config.hidden < 1 || config.kernel_size < 1 || config.kernel_size % 2 == 0 ||
      config.feature_upsample < 1) {
    throw std::invalid_argument("invalid adapter geometry");
  }
  const int ks = config.kernel_size;
  if (config.beta < 0.0) throw std::invalid_argument("commitment weight must be >= 0");
  Rng rng = make_rng(config.seed, "adapter.init");
  const double act_gain = std::sqrt(2.0);
  extractor_.add<Conv2d<float>>("extractor.conv1", config.latent_channels, config.hidden, ks, 1, rng, act_gain);
  extractor_.add<Activation<float>>("extractor.act1", ActivationKind::kSilu);
  const int up = config.feature_upsample;
  extractor_.add<Conv2d<float>>("extractor.conv2", config.hidden, config.code_dim * up * up, ks, 1, rng, 0.25);
  if (up > 1) extractor_.add<nn::DepthToSpace<float>>("extractor.unpack", up);

  Rng code_rng = make_rng(config.seed, "adapter.codebook");
  codebook_ = Codebook::random(config.codebook_size, config.code_dim, code_rng);

  if (up > 1) mapping_.add<nn::SpaceToDepth<float>>("mapping.pack", up);
  mapping_.add<Conv2d<float>>("mapping.conv1", config.code_dim * up * up, config.hidden, ks, 1, rng, act_gain);
  mapping_.add<Activation<float>>("mapping.act1", ActivationKind::kSilu);
  mapping_.add<Conv2d<float>>("mapping.conv2", config.hidden, config.latent_channels, ks, 1, rng, 0.1);
  set_trainable(false);
}

void AlignmentAdapter::check_latent(const LatentCode& z) const {
  if (z.channels() != config_.latent_channels || z.height() < 1 || z.width() < 1) {
    throw nn::ShapeError("adapter expects a " + std::to_string(config_.latent_channels) + "-channel latent, got " +
                         z.shape().str());
  }
}

nn::TensorF AlignmentAdapter::extract_features(const LatentCode& z) const {
  check_latent(z);
  return extractor_.forward(z);
}

LatentCode AlignmentAdapter::map_to_latent(const nn::TensorF& quantized) const {
  if (quantized.channels() != config_.code_dim) {
    throw nn::ShapeError("mapping network expects " + std::to_string(config_.code_dim) + " channels, got " +
                         quantized.shape().str());
  }
  return mapping_.forward(quantized);
}

LatentCode AlignmentAdapter::align(const LatentCode& z_lq) const {
  return map_to_latent(quantize_map(extract_features(z_lq), codebook_).quantized);
}

AlignmentAdapter::Trace AlignmentAdapter::forward_trace(const LatentCode& z_lq, bool count_usage) {
  check_latent(z_lq);
  Trace t;
  t.extractor = extractor_.trace(z_lq);
  t.quantized = quantize_map(t.extractor.output(), codebook_, count_usage);
  t.mapping = mapping_.trace(t.quantized.quantized);
  return t;
}

AlignmentAdapter::Backward AlignmentAdapter::backward(const Trace& trace, const LatentCode& grad_aligned,
                                                      const nn::TensorF& grad_commitment) {
  Backward out;
  out.grad_quantized = mapping_.backward(trace.mapping, grad_aligned, true);
  auto& entries = codebook_.entries();
  if (entries.trainable) {
    const int d = codebook_.dim();
    const auto g = out.grad_quantized.matrix();
    for (std::size_t p = 0; p < trace.quantized.indices.size(); ++p) {
      float* row = entries.grad.data() + static_cast<std::size_t>(trace.quantized.indices[p]) * d;
      for (int j = 0; j < d; ++j) row[j] += g(j, static_cast<Eigen::Index>(p));
    }
  }
  out.grad_features = out.grad_quantized;
  if (grad_commitment.size() > 0) out.grad_features += grad_commitment;
  extractor_.backward(trace.extractor, out.grad_features, false);
  return out;
}

std::vector<nn::Parameter<float>*> AlignmentAdapter::parameters() {
  auto out = extractor_.parameters();
  out.push_back(&codebook_.entries());
  for (auto* p : mapping_.parameters()) out.push_back(p);
  return out;
}

std::vector<const nn::Parameter<float>*> AlignmentAdapter::parameters() const {
  auto out = extractor_.parameters();
  out.push_back(&codebook_.entries());
  for (const auto* p : mapping_.parameters()) out.push_back(p);
  return out;
}

void AlignmentAdapter::set_trainable(bool on) {
  for (auto* p : parameters()) p->trainable = on;
}

void Stage1Schedule::validate() const {
  if (learning_rate <= 0.0 || batch_size < 1 || epochs < 0) throw std::invalid_argument("invalid stage-1 schedule");
}

double mean_alignment_gap(const AlignmentAdapter& adapter, const std::vector<LatentPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_alignment_gap: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) {
    const LatentCode aligned = adapter.align(p.lq);
    total += alignment_loss(aligned, p.hq, aligned, aligned, 0.0);
  }
  return total / static_cast<double>(pairs.size());
}

double mean_latent_gap(const std::vector<LatentPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("mean_latent_gap: no pairs");
  double total = 0.0;
  for (const auto& p : pairs) total += alignment_loss(p.lq, p.hq, p.lq, p.lq, 0.0);
  return total / static_cast<double>(pairs.size());
}

Stage1Result train_stage1(AlignmentAdapter& adapter, const std::vector<LatentPair>& pairs,
                          const Stage1Schedule& schedule, const std::function<void(int, double)>& on_epoch) {
  schedule.validate();
  if (pairs.empty()) throw std::invalid_argument("stage-1 training needs at least one pair");
  adapter.codebook().reset_usage();
  Stage1Result result;
  if (schedule.epochs == 0) return result;

  adapter.set_trainable(true);
  nn::Adam<float> adam(adapter.parameters(), nn::AdamSettings::with(schedule.learning_rate, schedule.moments));
  Rng order_rng = make_rng(schedule.seed, "stage1.batch-order");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(schedule.batch_size);
  const long total_steps = static_cast<long>((pairs.size() + batch - 1) / batch) * schedule.epochs;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[static_cast<std::size_t>(uniform_int(order_rng, 0, static_cast<std::int64_t>(i - 1)))]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
      for (std::size_t k = start; k < end; ++k) {
        const LatentPair& pair = pairs[order[k]];
        const auto trace = adapter.forward_trace(pair.lq, true);
        LatentCode grad_aligned;
        nn::TensorF grad_commit;
        epoch_loss += alignment_loss(trace.aligned(), pair.hq, trace.features(), trace.quantized.quantized,
                                     adapter.beta(), &grad_aligned, &grad_commit);
        adapter.backward(trace, grad_aligned, grad_commit);
        const double w = adapter.config().codebook_weight;
        if (w > 0.0) {
          const auto f = trace.features().matrix();
          const auto q = trace.quantized.quantized.matrix();
          const int d = adapter.codebook().dim();
          const float scale = static_cast<float>(2.0 * w / static_cast<double>(trace.features().size()));
          auto& entries = adapter.codebook().entries();
          for (std::size_t p = 0; p < trace.quantized.indices.size(); ++p) {
            float* row = entries.grad.data() + static_cast<std::size_t>(trace.quantized.indices[p]) * d;
            const auto col = static_cast<Eigen::Index>(p);
            for (int j = 0; j < d; ++j) row[j] += scale * (q(j, col) - f(j, col));
          }
        }
      }
      adam.set_learning_rate(
          nn::cosine_learning_rate(schedule.learning_rate, adam.steps(), total_steps, schedule.lr_floor_fraction));
      adam.step(1.0 / static_cast<double>(end - start));
    }
    epoch_loss /= static_cast<double>(pairs.size());
    result.loss_trace.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (!std::isfinite(epoch_loss)) {
      adapter.set_trainable(false);
      throw codec::TrainingFailure("stage-1 training diverged at epoch " + std::to_string(epoch), result.loss_trace);
    }
  }
  adapter.set_trainable(false);
  return result;
}

}  // namespace lafr::adapter
