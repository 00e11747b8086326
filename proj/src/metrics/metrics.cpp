// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lafr::metrics {

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, "psnr");
  const auto& pa = a.pixels();
  const auto& pb = b.pixels();
  if (pa.empty()) throw SizeError("psnr: empty image");
  double acc = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  const double m = acc / static_cast<double>(pa.size());
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / m);
}

std::string format_psnr(double db) {
  if (std::isinf(db) && db > 0) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", db);
  return buf;
}

double parse_psnr(const std::string& text) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double v = std::stod(text, &used);
  if (used != text.size()) throw std::invalid_argument("not a PSNR value: " + text);
  return v;
}

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

// Valid-region separable filtering of an h x w plane.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& plane, const std::vector<double>& w) {
  const Eigen::Index oh = plane.rows() - kWindow + 1;
  const Eigen::Index ow = plane.cols() - kWindow + 1;
  Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(plane.rows(), ow);
  for (Eigen::Index x = 0; x < ow; ++x) {
    for (int k = 0; k < kWindow; ++k) rows.col(x) += w[k] * plane.col(x + k);
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(oh, ow);
  for (Eigen::Index y = 0; y < oh; ++y) {
    for (int k = 0; k < kWindow; ++k) out.row(y) += w[k] * rows.row(y + k);
  }
  return out;
}

Eigen::MatrixXd channel_plane(const Image& img, int c) {
  Eigen::MatrixXd m(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) m(y, x) = img.at(y, x, c);
  }
  return m;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) {
    throw SizeError("ssim needs images of at least 11x11, got " + a.shape_str());
  }
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  const auto w = gaussian_window();
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    const Eigen::MatrixXd x = channel_plane(a, c);
    const Eigen::MatrixXd y = channel_plane(b, c);
    const Eigen::MatrixXd mx = filter_valid(x, w);
    const Eigen::MatrixXd my = filter_valid(y, w);
    const Eigen::MatrixXd sxx = filter_valid(x.cwiseProduct(x), w) - mx.cwiseProduct(mx);
    const Eigen::MatrixXd syy = filter_valid(y.cwiseProduct(y), w) - my.cwiseProduct(my);
    const Eigen::MatrixXd sxy = filter_valid(x.cwiseProduct(y), w) - mx.cwiseProduct(my);
    const Eigen::ArrayXXd num = (2.0 * mx.cwiseProduct(my).array() + c1) * (2.0 * sxy.array() + c2);
    const Eigen::ArrayXXd den =
        (mx.cwiseProduct(mx).array() + my.cwiseProduct(my).array() + c1) * (sxx.array() + syy.array() + c2);
    total += (num / den).mean();
  }
  return total / a.channels();
}

namespace {

void check_features(const FeatureSet& f, Eigen::Index min_rows, const char* what) {
  if (f.rows.rows() < min_rows) {
    throw std::invalid_argument(std::string(what) + " needs at least " + std::to_string(min_rows) + " rows, got " +
                                std::to_string(f.rows.rows()));
  }
  if (!f.rows.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite features");
}

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Gaussian fit(const Eigen::MatrixXd& rows) {
  Gaussian g;
  g.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - g.mean.transpose();
  g.cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  return g;
}

// Tr((A B)^{1/2}) for symmetric PSD A, B, via sqrt(A) B sqrt(A).
bool trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double* out) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  if (ea.info() != Eigen::Success) return false;
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sa = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sa * b * sa;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  if (em.info() != Eigen::Success) return false;
  *out = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::isfinite(*out);
}

}  // namespace

double fid(const FeatureSet& a, const FeatureSet& b) {
  check_features(a, 2, "fid");
  check_features(b, 2, "fid");
  if (a.rows.cols() != b.rows.cols()) throw std::invalid_argument("fid: feature dimensions differ");
  const Gaussian ga = fit(a.rows);
  const Gaussian gb = fit(b.rows);
  double tr_sqrt = 0.0;
  if (!trace_sqrt_product(ga.cov, gb.cov, &tr_sqrt)) {
    const Eigen::MatrixXd eps = 1e-6 * Eigen::MatrixXd::Identity(ga.cov.rows(), ga.cov.cols());
    if (!trace_sqrt_product(ga.cov + eps, gb.cov + eps, &tr_sqrt)) {
      throw std::runtime_error("fid: covariance square root failed after regularization");
    }
  }
  const double v = (ga.mean - gb.mean).squaredNorm() + ga.cov.trace() + gb.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, v);
}

double identity_degree(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("identity_degree: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("identity_degree: zero vector");
  // half-angle form stays exact at 0 and 180 where acos loses precision
  const Eigen::VectorXd ua = a / na, ub = b / nb;
  return 2.0 * std::atan2((ua - ub).norm(), (ua + ub).norm()) * 180.0 / std::numbers::pi;
}

double landmark_distance(const Landmarks& a, const Landmarks& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("landmark_distance: point counts differ (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw std::invalid_argument("landmark_distance: empty landmark set");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::hypot(a[i].x - b[i].x, a[i].y - b[i].y);
  return total / static_cast<double>(a.size());
}

namespace {

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (rows.row(i) - rows.row(j)).norm();
    }
  }
  return d;
}

}  // namespace

double intra_class_distance(const FeatureSet& f) {
  check_features(f, 2, "intra_class_distance");
  const Eigen::Index n = f.rows.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) total += (f.rows.row(i) - f.rows.row(j)).norm();
  }
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

double silhouette(const FeatureSet& f, const std::vector<int>& labels) {
  check_features(f, 2, "silhouette");
  const Eigen::Index n = f.rows.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw std::invalid_argument("silhouette: one label per row");
  std::vector<int> classes(labels);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) throw std::invalid_argument("silhouette needs at least two classes");

  const Eigen::MatrixXd d = pairwise_distances(f.rows);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> sum(classes.size(), 0.0);
    std::vector<double> count(classes.size(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const auto k = std::lower_bound(classes.begin(), classes.end(), labels[j]) - classes.begin();
      sum[k] += d(i, j);
      count[k] += 1.0;
    }
    const auto own = std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin();
    if (count[own] == 0.0) continue;  // singleton
    const double a = sum[own] / count[own];
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < classes.size(); ++k) {
      if (static_cast<std::ptrdiff_t>(k) != own && count[k] > 0.0) b = std::min(b, sum[k] / count[k]);
    }
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

namespace {

double gray_at(const Image& img, int y, int x) {
  y = std::clamp(y, 0, img.height() - 1);
  x = std::clamp(x, 0, img.width() - 1);
  if (img.channels() == 1) return img.at(y, x, 0);
  return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

std::vector<double> patch(const Image& img, int cy, int cx, int r) {
  std::vector<double> p;
  p.reserve(static_cast<std::size_t>((2 * r + 1) * (2 * r + 1)));
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) p.push_back(gray_at(img, cy + dy, cx + dx));
  }
  return p;
}

double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 1e-12 || sbb <= 1e-12) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

Landmarks locate_landmarks(const Image& restored, const Image& reference, const Landmarks& reference_points,
                           int patch_radius, int search_radius) {
  require_same_shape(restored, reference, "locate_landmarks");
  if (patch_radius < 1 || search_radius < 0) throw std::invalid_argument("locate_landmarks: invalid radii");
  Landmarks out;
  out.reserve(reference_points.size());
  for (const auto& p : reference_points) {
    const int cx = static_cast<int>(std::lround(p.x));
    const int cy = static_cast<int>(std::lround(p.y));
    const auto ref = patch(reference, cy, cx, patch_radius);
    int best_dx = 0;
    int best_dy = 0;
    double best = ncc(ref, patch(restored, cy, cx, patch_radius));
    for (int dy = -search_radius; dy <= search_radius; ++dy) {
      for (int dx = -search_radius; dx <= search_radius; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const double s = ncc(ref, patch(restored, cy + dy, cx + dx, patch_radius));
        if (s > best) {
          best = s;
          best_dx = dx;
          best_dy = dy;
        }
      }
    }
    out.push_back({std::clamp(p.x + best_dx, 0.0, static_cast<double>(restored.width() - 1)),
                   std::clamp(p.y + best_dy, 0.0, static_cast<double>(restored.height() - 1))});
  }
  return out;
}

namespace {

double mean_of(const std::vector<MetricsRow>& rows, double MetricsRow::*field) {
  if (rows.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : rows) total += r.*field;
  return total / static_cast<double>(rows.size());
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double MetricsReport::mean_psnr() const { return mean_of(rows, &MetricsRow::psnr); }
double MetricsReport::mean_ssim() const { return mean_of(rows, &MetricsRow::ssim); }
double MetricsReport::mean_deg() const { return mean_of(rows, &MetricsRow::deg); }
double MetricsReport::mean_lmd() const { return mean_of(rows, &MetricsRow::lmd); }

std::string MetricsReport::csv() const {
  std::ostringstream out;
  out << "id,psnr,ssim,deg,lmd\n";
  for (const auto& r : rows) {
    out << r.id << ',' << format_psnr(r.psnr) << ',' << fixed(r.ssim) << ',' << fixed(r.deg) << ',' << fixed(r.lmd)
        << '\n';
  }
  return out.str();
}

std::string MetricsReport::summary_json() const {
  nlohmann::ordered_json j;
  const double p = mean_psnr();
  if (std::isinf(p)) {
    j["psnr"] = format_psnr(p);
  } else {
    j["psnr"] = p;
  }
  j["ssim"] = mean_ssim();
  j["deg"] = mean_deg();
  j["lmd"] = mean_lmd();
  j["fid"] = fid;
  j["rows"] = rows.size();
  j["restored_count"] = restored_count;
  j["reference_count"] = reference_count;
  return j.dump(2) + "\n";
}

}  // namespace lafr::metrics
