// Copyright 2026 The phm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "phm/image.hpp"

// Classical histogram machinery: 256-bin histograms, CDFs, and conventional
// histogram matching through the practical argmin LUT. These are the
// baselines and the oracle that the differentiable layer is checked against.

namespace phm {

inline constexpr int kBins = 256;

struct Histogram {
  std::array<std::int64_t, kBins> counts{};
  std::int64_t total = 0;
};

// Normalized cumulative distribution. Nondecreasing; the last entry is
// exactly 1 because the prefix sums are taken in integers before dividing.
struct Cdf {
  std::array<double, kBins> values{};
};

// Per-bin mapping from source pixel values to target pixel values.
struct Lut {
  std::array<int, kBins> map{};
};

inline Histogram histogram(std::span<const double> channel) {
  if (channel.empty()) {
    throw std::invalid_argument("histogram: channel has no pixels");
  }
  Histogram h;
  for (const double v : channel) ++h.counts[quantize255(v)];
  h.total = static_cast<std::int64_t>(channel.size());
  return h;
}

inline Cdf cdf(const Histogram& hist) {
  if (hist.total <= 0) {
    throw std::invalid_argument("cdf: histogram total must be positive");
  }
  Cdf out;
  std::int64_t acc = 0;
  for (int p = 0; p < kBins; ++p) {
    acc += hist.counts[p];
    out.values[p] = static_cast<double>(acc) / static_cast<double>(hist.total);
  }
  return out;
}

// CDF of the uniform target distribution, values[q] = (q + 1) / 256.
// Matching against it is histogram equalization.
inline Cdf uniform_cdf() {
  Cdf out;
  for (int q = 0; q < kBins; ++q) out.values[q] = (q + 1) / 256.0;
  return out;
}

// LUT via the practical argmin: map[p] is the q minimizing
// |target(q) - source(p)|. The strict '<' update keeps the first (smallest)
// minimizer, which pins tie-breaking and makes the table reproducible.
inline Lut match_lut(const Cdf& source, const Cdf& target) {
  Lut lut;
  for (int p = 0; p < kBins; ++p) {
    double best = std::numeric_limits<double>::infinity();
    int best_q = 0;
    for (int q = 0; q < kBins; ++q) {
      const double d = std::abs(target.values[q] - source.values[p]);
      if (d < best) {
        best = d;
        best_q = q;
      }
    }
    lut.map[p] = best_q;
  }
  return lut;
}

// Replaces every pixel by map[bin(pixel)] / 255, one LUT per channel.
inline ImageTensor apply_lut(const ImageTensor& image,
                             const std::vector<Lut>& luts) {
  if (static_cast<int>(luts.size()) != image.channels) {
    throw std::invalid_argument("apply_lut: got " +
                                std::to_string(luts.size()) + " LUTs for " +
                                std::to_string(image.channels) + " channels");
  }
  ImageTensor out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c) {
    const auto src = image.channel(c);
    auto dst = out.channel(c);
    const auto& map = luts[c].map;
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] = map[quantize255(src[i])] / 255.0;
    }
  }
  return out;
}

// Histogram equalization: per-channel matching to the uniform target.
inline ImageTensor equalize(const ImageTensor& image) {
  const Cdf target = uniform_cdf();
  std::vector<Lut> luts;
  luts.reserve(image.channels);
  for (int c = 0; c < image.channels; ++c) {
    luts.push_back(match_lut(cdf(histogram(image.channel(c))), target));
  }
  return apply_lut(image, luts);
}

// Conventional histogram matching of source onto target's distribution.
inline ImageTensor match_histogram(const ImageTensor& source,
                                   const ImageTensor& target) {
  if (source.channels != target.channels) {
    throw std::invalid_argument(
        "match_histogram: channel mismatch (" +
        std::to_string(source.channels) + " vs " +
        std::to_string(target.channels) + ")");
  }
  std::vector<Lut> luts;
  luts.reserve(source.channels);
  for (int c = 0; c < source.channels; ++c) {
    luts.push_back(match_lut(cdf(histogram(source.channel(c))),
                             cdf(histogram(target.channel(c)))));
  }
  return apply_lut(source, luts);
}

}  // namespace phm
