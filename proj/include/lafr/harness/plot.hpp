// Copyright (c) 2026, The lafr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "lafr/data/image.hpp"

namespace lafr::harness {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static line chart: axes, min/max tick labels in a 3x5 digit font, one
/// colour per series. Non-finite points are skipped.
Image line_plot(const std::vector<Series>& series, int width = 480, int height = 320);

/// Vertical bars, one per value, on a shared zero baseline.
Image bar_plot(const std::vector<double>& values, int width = 480, int height = 320);

}  // namespace lafr::harness
