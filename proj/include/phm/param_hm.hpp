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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <bit>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "phm/image.hpp"

// Differentiable, parametric histogram matching.
//
// The forward pass imposes a trainable target distribution on an image, one
// color channel at a time:
//
//   1. sort the flattened channel (stable, so ties keep flatten order),
//   2. upsample the s trainable values to H*W ranks by linear interpolation
//      (align-corners: the first/last parameters map to the extreme ranks),
//   3. scatter the interpolated values back through the sort permutation,
//   4. clip to [0, 1].
//
// Every output value is a convex combination of two parameters, so the exact
// gradient w.r.t. the parameters is the pair of interpolation weights,
// scattered the same way. The gradient w.r.t. the input image is identically
// zero: pixel values only choose the permutation, and the permutation is
// piecewise constant.

namespace phm {

// Trainable target distribution: one vector of `size` reals per channel.
// Values are unconstrained (training may move them outside [0, 1] and out of
// sorted order); the forward clip handles range.
struct ParamContainer {
  int channels = 0;
  int size = 0;  // s
  std::vector<double> values;  // channels * size, channel-major

  std::span<double> channel(int c) {
    return {values.data() + static_cast<std::size_t>(c) * size,
            static_cast<std::size_t>(size)};
  }
  std::span<const double> channel(int c) const {
    return {values.data() + static_cast<std::size_t>(c) * size,
            static_cast<std::size_t>(size)};
  }
};

// Everything the backward pass needs from a forward run: for each channel and
// sorted rank k, the original pixel position, the lower parameter index and
// interpolation weight that produced that rank's value, and whether the
// pre-clip value fell strictly inside (0, 1) so gradient may pass.
struct SortCache {
  int channels = 0;
  int height = 0;
  int width = 0;
  int param_size = 0;
  std::vector<std::uint32_t> perm;    // rank -> original index in channel
  std::vector<std::uint32_t> lower;   // rank -> parameter index j
  std::vector<double> weight;         // rank -> fractional weight w in [0, 1]
  std::vector<std::uint8_t> open;     // rank -> pre-clip value inside (0, 1)

  int pixels() const { return height * width; }
};

inline ParamContainer init_linear_ramp(int channels, int size) {
  if (channels < 1) {
    throw std::invalid_argument("init_linear_ramp: channels must be >= 1");
  }
  if (size < 2) {
    throw std::invalid_argument("init_linear_ramp: size must be >= 2");
  }
  ParamContainer pc{channels, size, {}};
  pc.values.resize(static_cast<std::size_t>(channels) * size);
  for (int c = 0; c < channels; ++c) {
    auto ch = pc.channel(c);
    for (int j = 0; j < size; ++j) ch[j] = static_cast<double>(j) / (size - 1);
  }
  return pc;
}

namespace detail {

// Order-preserving bijection from finite doubles to unsigned keys: flip the
// sign bit for non-negatives, all bits for negatives.
inline std::uint64_t sortable_bits(double v) {
  const std::uint64_t b = std::bit_cast<std::uint64_t>(v);
  const std::uint64_t mask =
      static_cast<std::uint64_t>(static_cast<std::int64_t>(b) >> 63);
  return b ^ (mask | 0x8000000000000000ull);
}

using RankEntry = std::pair<std::uint64_t, std::uint32_t>;  // key, index

// Stable LSD radix sort of (key, original index) entries, 16-bit digits.
// Produces exactly the ascending (value, index) order a comparison sort
// would, at a fraction of the cost for image-sized channels; the sort is the
// dominant cost of the forward pass. Passes whose digit is constant across
// the input are skipped. Buffers are caller-owned so repeated sorts reuse
// their allocations.
inline void radix_sort_ranks(std::span<const double> values,
                             std::vector<RankEntry>& keyed,
                             std::vector<RankEntry>& scratch) {
  const std::size_t n = values.size();
  keyed.resize(n);
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    keyed[i] = {sortable_bits(values[i]), static_cast<std::uint32_t>(i)};
  }
  std::vector<std::uint32_t> counts(1 << 16);
  for (int pass = 0; pass < 4; ++pass) {
    const int shift = 16 * pass;
    std::fill(counts.begin(), counts.end(), 0);
    for (const auto& e : keyed) ++counts[(e.first >> shift) & 0xFFFF];
    if (counts[(keyed[0].first >> shift) & 0xFFFF] == n) continue;
    std::uint32_t offset = 0;
    for (auto& c : counts) {
      const std::uint32_t bucket = c;
      c = offset;
      offset += bucket;
    }
    for (const auto& e : keyed) {
      scratch[counts[(e.first >> shift) & 0xFFFF]++] = e;
    }
    keyed.swap(scratch);
  }
}

}  // namespace detail

// Ascending stable sort. perm[k] is the original index of the k-th smallest
// value; equal values keep their original flatten order.
inline std::pair<std::vector<double>, std::vector<std::uint32_t>>
sort_with_indices(std::span<const double> channel) {
  if (channel.empty()) {
    throw std::invalid_argument("sort_with_indices: empty channel");
  }
  const std::size_t n = channel.size();
  std::vector<detail::RankEntry> keyed, scratch;
  detail::radix_sort_ranks(channel, keyed, scratch);
  std::vector<double> sorted(n);
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) {
    perm[i] = keyed[i].second;
    sorted[i] = channel[perm[i]];
  }
  return {std::move(sorted), std::move(perm)};
}

namespace detail {

struct RampTap {
  int lower;
  double weight;
};

// Align-corners source position for output rank k: t = k * (s-1) / (M-1).
// `step` is that ratio; the lower index is clamped to s-2 so rank M-1 reads
// params[s-1] through weight 1.
inline RampTap ramp_tap(int rank, double step, int param_size) {
  const double t = rank * step;
  const int j = std::min(static_cast<int>(t), param_size - 2);
  return {j, std::clamp(t - j, 0.0, 1.0)};
}

inline double ramp_step(int param_size, int out_n) {
  return out_n > 1 ? static_cast<double>(param_size - 1) / (out_n - 1) : 0.0;
}

}  // namespace detail

// Linear resampling of `params` to `out_n` points, align-corners. Identity
// when out_n equals the parameter count; the same formula downsamples.
inline std::vector<double> upsample_linear(std::span<const double> params,
                                           int out_n) {
  if (params.size() < 2) {
    throw std::invalid_argument("upsample_linear: need at least 2 parameters");
  }
  if (out_n < 1) {
    throw std::invalid_argument("upsample_linear: output count must be >= 1");
  }
  const int s = static_cast<int>(params.size());
  const double step = detail::ramp_step(s, out_n);
  std::vector<double> out(out_n);
  for (int k = 0; k < out_n; ++k) {
    const auto tap = detail::ramp_tap(k, step, s);
    out[k] = (1.0 - tap.weight) * params[tap.lower] +
             tap.weight * params[tap.lower + 1];
  }
  return out;
}

// Forward pass of the distribution matcher: sort, upsample, scatter, clip.
// The returned cache feeds phm_backward and is only valid for the image and
// parameters it was produced with.
inline std::pair<ImageTensor, SortCache> phm_forward(
    const ImageTensor& image, const ParamContainer& pc) {
  if (pc.channels != image.channels) {
    throw std::invalid_argument(
        "phm_forward: parameter container has " + std::to_string(pc.channels) +
        " channels, image has " + std::to_string(image.channels));
  }
  if (pc.size < 2 ||
      pc.values.size() != static_cast<std::size_t>(pc.channels) * pc.size) {
    throw std::invalid_argument("phm_forward: malformed parameter container");
  }

  const int m = image.pixels();
  ImageTensor out(image.channels, image.height, image.width);
  SortCache cache{image.channels, image.height, image.width, pc.size,
                  {},             {},           {},          {}};
  const std::size_t slots = static_cast<std::size_t>(image.channels) * m;
  cache.perm.resize(slots);
  cache.lower.resize(slots);
  cache.weight.resize(slots);
  cache.open.resize(slots);

  const double step = detail::ramp_step(pc.size, m);
  std::vector<detail::RankEntry> keyed, scratch;  // reused across channels
  for (int c = 0; c < image.channels; ++c) {
    detail::radix_sort_ranks(image.channel(c), keyed, scratch);
    const auto params = pc.channel(c);
    auto dst = out.channel(c);
    const std::size_t base = static_cast<std::size_t>(c) * m;
    for (int k = 0; k < m; ++k) {
      const std::uint32_t pixel = keyed[k].second;
      const auto tap = detail::ramp_tap(k, step, pc.size);
      const double value = (1.0 - tap.weight) * params[tap.lower] +
                           tap.weight * params[tap.lower + 1];
      dst[pixel] = std::clamp(value, 0.0, 1.0);
      cache.perm[base + k] = pixel;
      cache.lower[base + k] = static_cast<std::uint32_t>(tap.lower);
      cache.weight[base + k] = tap.weight;
      cache.open[base + k] = value > 0.0 && value < 1.0;
    }
  }
  return {std::move(out), std::move(cache)};
}

// Gradient of a scalar loss w.r.t. the parameters, given the loss gradient
// at every output pixel. Each unclipped rank routes its pixel's gradient to
// the two parameters that interpolated it, weighted (1-w) and w; clipped
// ranks contribute nothing. The buffer is zero-initialized per call; batch
// accumulation is the caller's job.
inline std::vector<double> phm_backward(std::span<const double> grad_output,
                                        const SortCache& cache,
                                        const ParamContainer& pc) {
  if (cache.channels != pc.channels || cache.param_size != pc.size) {
    throw std::invalid_argument(
        "phm_backward: cache does not match parameter container");
  }
  const int m = cache.pixels();
  const std::size_t slots = static_cast<std::size_t>(cache.channels) * m;
  if (grad_output.size() != slots) {
    throw std::invalid_argument("phm_backward: gradient has " +
                                std::to_string(grad_output.size()) +
                                " elements, expected " +
                                std::to_string(slots));
  }
  if (cache.perm.size() != slots || cache.lower.size() != slots ||
      cache.weight.size() != slots || cache.open.size() != slots) {
    throw std::invalid_argument("phm_backward: malformed cache");
  }

  std::vector<double> grad(static_cast<std::size_t>(pc.channels) * pc.size,
                           0.0);
  for (int c = 0; c < cache.channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * m;
    double* gp = grad.data() + static_cast<std::size_t>(c) * pc.size;
    for (int k = 0; k < m; ++k) {
      const std::size_t slot = base + k;
      if (!cache.open[slot]) continue;
      const double g = grad_output[base + cache.perm[slot]];
      const double w = cache.weight[slot];
      gp[cache.lower[slot]] += (1.0 - w) * g;
      gp[cache.lower[slot] + 1] += w * g;
    }
  }
  return grad;
}

// Text checkpoint, header "PHM1 <C> <s>" then one value per line in channel
// order. %.12g keeps round-trips below 1e-9 absolute error and makes
// save(load(f)) byte-identical for canonical files.
inline void save_params(const ParamContainer& pc, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_params: cannot open " + path);
  out << "PHM1 " << pc.channels << " " << pc.size << "\n";
  char line[64];
  for (const double v : pc.values) {
    std::snprintf(line, sizeof(line), "%.12g\n", v);
    out << line;
  }
  if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

namespace detail {

inline double parse_param_line(const std::string& line, int line_no,
                               const std::string& path) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(line, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  // Trailing whitespace is fine; anything else on the line is not.
  while (used < line.size() &&
         std::isspace(static_cast<unsigned char>(line[used]))) {
    ++used;
  }
  if (used == 0 || used != line.size()) {
    throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                             ": cannot parse '" + line + "' as a float");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                             ": non-finite value '" + line + "'");
  }
  return v;
}

}  // namespace detail

inline ParamContainer load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_params: cannot open " + path);

  std::string header;
  if (!std::getline(in, header)) {
    throw std::runtime_error(path + ": line 1: missing PHM1 header");
  }
  std::string magic;
  int channels = 0, size = 0;
  {
    char extra = '\0';
    std::istringstream hs(header);
    hs >> magic >> channels >> size;
    if (magic != "PHM1") {
      throw std::runtime_error(path + ": line 1: bad magic '" + magic +
                               "' (expected 'PHM1')");
    }
    if (hs.fail() || (hs >> extra) || channels < 1 || size < 2) {
      throw std::runtime_error(path + ": line 1: malformed header '" + header +
                               "'");
    }
  }

  ParamContainer pc{channels, size, {}};
  const std::size_t expected = static_cast<std::size_t>(channels) * size;
  pc.values.reserve(expected);
  std::string line;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (pc.values.size() == expected) {
      throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                               ": expected " + std::to_string(expected) +
                               " values, found extra data");
    }
    pc.values.push_back(detail::parse_param_line(line, line_no, path));
  }
  if (pc.values.size() != expected) {
    throw std::runtime_error(path + ": line " + std::to_string(line_no) +
                             ": expected " + std::to_string(expected) +
                             " values, got " +
                             std::to_string(pc.values.size()));
  }
  return pc;
}

}  // namespace phm
