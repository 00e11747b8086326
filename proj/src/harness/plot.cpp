// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#include "lafr/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace lafr::harness {

namespace {

using Rgb = std::array<float, 3>;

constexpr Rgb kBlack = {0.f, 0.f, 0.f};
constexpr Rgb kGrey = {0.85f, 0.85f, 0.85f};
constexpr std::array<Rgb, 6> kPalette = {{{0.12f, 0.47f, 0.71f},
                                          {0.84f, 0.15f, 0.16f},
                                          {0.17f, 0.63f, 0.17f},
                                          {0.58f, 0.40f, 0.74f},
                                          {1.00f, 0.50f, 0.05f},
                                          {0.55f, 0.34f, 0.29f}}};

// 3x5 glyphs, one row per 3-bit mask, top to bottom.
struct Glyph {
  char c;
  std::array<unsigned char, 5> rows;
};
constexpr std::array<Glyph, 16> kFont = {{{'0', {7, 5, 5, 5, 7}},
                                          {'1', {2, 6, 2, 2, 7}},
                                          {'2', {7, 1, 7, 4, 7}},
                                          {'3', {7, 1, 7, 1, 7}},
                                          {'4', {5, 5, 7, 1, 1}},
                                          {'5', {7, 4, 7, 1, 7}},
                                          {'6', {7, 4, 7, 5, 7}},
                                          {'7', {7, 1, 1, 1, 1}},
                                          {'8', {7, 5, 7, 5, 7}},
                                          {'9', {7, 5, 7, 1, 7}},
                                          {'.', {0, 0, 0, 0, 2}},
                                          {'-', {0, 0, 7, 0, 0}},
                                          {'e', {0, 7, 7, 4, 7}},
                                          {'+', {0, 2, 7, 2, 0}},
                                          {'i', {2, 0, 2, 2, 2}},
                                          {'n', {0, 6, 5, 5, 5}}}};

class Canvas {
 public:
  Canvas(int w, int h) : img_(h, w, 3, 1.0f) {}

  void put(int x, int y, const Rgb& c) {
    if (x < 0 || y < 0 || x >= img_.width() || y >= img_.height()) return;
    for (int k = 0; k < 3; ++k) img_.at(y, x, k) = c[k];
  }

  void line(int x0, int y0, int x1, int y1, const Rgb& c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      put(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }

  void fill(int x0, int y0, int x1, int y1, const Rgb& c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) put(x, y, c);
  }

  // Scale-2 glyphs, so each character is 6x10 plus a 2 px gap.
  void text(int x, int y, const std::string& s) {
    for (char ch : s) {
      for (const auto& g : kFont) {
        if (g.c != ch) continue;
        for (int r = 0; r < 5; ++r)
          for (int b = 0; b < 3; ++b)
            if (g.rows[r] & (4 >> b)) fill(x + 2 * b, y + 2 * r, x + 2 * b + 1, y + 2 * r + 1, kBlack);
      }
      x += 8;
    }
  }

  Image take() { return std::move(img_); }

 private:
  Image img_;
};

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Frame {
  int left = 70, right, top = 16, bottom;
  double x0, x1, y0, y1;
  int px(double x) const { return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left))); }
  int py(double y) const { return bottom - static_cast<int>(std::lround((y - y0) / (y1 - y0) * (bottom - top))); }
};

void draw_axes(Canvas& cv, const Frame& f, bool x_labels) {
  for (int k = 1; k < 4; ++k) {
    const int y = f.top + (f.bottom - f.top) * k / 4;
    cv.line(f.left + 1, y, f.right, y, kGrey);
  }
  cv.line(f.left, f.top, f.left, f.bottom, kBlack);
  cv.line(f.left, f.bottom, f.right, f.bottom, kBlack);
  cv.text(4, f.top, label(f.y1));
  cv.text(4, f.bottom - 10, label(f.y0));
  if (x_labels) {
    cv.text(f.left, f.bottom + 6, label(f.x0));
    const std::string hi = label(f.x1);
    cv.text(f.right - 8 * static_cast<int>(hi.size()), f.bottom + 6, hi);
  }
}

void widen(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  } else {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
}

}  // namespace

Image line_plot(const std::vector<Series>& series, int width, int height) {
  if (width < 160 || height < 120) throw std::invalid_argument("plot canvas too small");
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.name + "' has mismatched x/y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  widen(ymin, ymax);
  if (!(xmax > xmin)) widen(xmin, xmax);

  Canvas cv(width, height);
  const Frame f{70, width - 12, 16, height - 24, xmin, xmax, ymin, ymax};
  draw_axes(cv, f, true);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Rgb& c = kPalette[k % kPalette.size()];
    const auto& s = series[k];
    int prev_x = 0, prev_y = 0;
    bool have_prev = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = f.px(s.x[i]), y = f.py(s.y[i]);
      if (have_prev) cv.line(prev_x, prev_y, x, y, c);
      cv.fill(x - 2, y - 2, x + 2, y + 2, c);
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
    // legend swatch
    cv.fill(width - 20, f.top + 4 + 10 * static_cast<int>(k), width - 14, f.top + 10 + 10 * static_cast<int>(k), c);
  }
  return cv.take();
}

Image bar_plot(const std::vector<double>& values, int width, int height) {
  if (width < 160 || height < 120) throw std::invalid_argument("plot canvas too small");
  double ymax = 0.0;
  for (double v : values)
    if (std::isfinite(v)) ymax = std::max(ymax, v);
  if (ymax <= 0.0) ymax = 1.0;
  Canvas cv(width, height);
  const Frame f{70, width - 12, 16, height - 24, 0.0, static_cast<double>(std::max<std::size_t>(values.size(), 1)),
                0.0, ymax};
  draw_axes(cv, f, true);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] <= 0.0) continue;
    const int xa = f.px(static_cast<double>(i)), xb = std::max(xa, f.px(static_cast<double>(i + 1)) - 1);
    cv.fill(xa + (xb > xa ? 1 : 0), f.py(values[i]), xb, f.bottom - 1, kPalette[0]);
  }
  return cv.take();
}

}  // namespace lafr::harness
