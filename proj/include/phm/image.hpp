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
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phm {

// Planar C x H x W pixel tensor with values normalized to [0, 1]. Planes are
// stored back to back (all of channel 0, then channel 1, ...) so per-channel
// scans and sorts run over contiguous memory. 8-bit data exists only at file
// I/O; everything in between operates on reals.
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ImageTensor() = default;

  ImageTensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w) {
    if (c < 1 || h < 1 || w < 1) {
      throw std::invalid_argument("ImageTensor: dimensions must be >= 1, got " +
                                  std::to_string(c) + "x" + std::to_string(h) +
                                  "x" + std::to_string(w));
    }
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }

  int pixels() const { return height * width; }

  double& at(int c, int h, int w) {
    return data[(static_cast<std::size_t>(c) * height + h) * width + w];
  }
  double at(int c, int h, int w) const {
    return data[(static_cast<std::size_t>(c) * height + h) * width + w];
  }

  std::span<double> channel(int c) {
    check_channel(c);
    return {data.data() + static_cast<std::size_t>(c) * pixels(),
            static_cast<std::size_t>(pixels())};
  }
  std::span<const double> channel(int c) const {
    check_channel(c);
    return {data.data() + static_cast<std::size_t>(c) * pixels(),
            static_cast<std::size_t>(pixels())};
  }

  bool same_shape(const ImageTensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void check_channel(int c) const {
    if (c < 0 || c >= channels) {
      throw std::out_of_range("channel index " + std::to_string(c) +
                              " out of range [0, " + std::to_string(channels) +
                              ")");
    }
  }
};

// Shared real -> 8-bit rule: round(v * 255), half up, clamped. Used both for
// file quantization and for histogram binning so the two stay consistent.
inline int quantize255(double v) {
  const long q = std::lround(v * 255.0);
  return static_cast<int>(std::clamp(q, 0l, 255l));
}

namespace detail {

// Reads one whitespace-delimited PPM header token, skipping '#' comments, and
// consumes the single delimiter that terminates it.
inline std::string ppm_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF && (std::isspace(ch) || ch == '#')) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    }
    ch = in.get();
  }
  while (ch != EOF && !std::isspace(ch)) {
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  return tok;
}

inline int ppm_int_field(std::istream& in, const char* field,
                         const std::string& path) {
  const std::string tok = ppm_token(in);
  try {
    std::size_t used = 0;
    const int value = std::stoi(tok, &used);
    if (used != tok.size() || value < 0) throw std::invalid_argument(tok);
    return value;
  } catch (const std::exception&) {
    throw std::runtime_error("load_ppm: " + path + ": malformed " +
                             std::string(field) + " field '" + tok + "'");
  }
}

}  // namespace detail

// Reads a binary PPM ("P6", maxval 255) into a normalized planar tensor.
inline ImageTensor load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_ppm: cannot open " + path);

  const std::string magic = detail::ppm_token(in);
  if (magic != "P6") {
    throw std::runtime_error("load_ppm: " + path + ": bad magic '" + magic +
                             "' (expected 'P6')");
  }
  const int width = detail::ppm_int_field(in, "width", path);
  const int height = detail::ppm_int_field(in, "height", path);
  const int maxval = detail::ppm_int_field(in, "maxval", path);
  if (width < 1 || height < 1) {
    throw std::runtime_error("load_ppm: " + path + ": invalid size " +
                             std::to_string(width) + "x" +
                             std::to_string(height));
  }
  if (maxval != 255) {
    throw std::runtime_error("load_ppm: " + path + ": unsupported maxval " +
                             std::to_string(maxval) + " (expected 255)");
  }

  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<unsigned char> raw(n * 3);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    throw std::runtime_error(
        "load_ppm: " + path + ": truncated pixel data (expected " +
        std::to_string(raw.size()) + " bytes, got " +
        std::to_string(in.gcount()) + ")");
  }

  ImageTensor image(3, height, width);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      image.data[static_cast<std::size_t>(c) * n + i] = raw[3 * i + c] / 255.0;
    }
  }
  return image;
}

// Writes a 3-channel tensor as binary PPM, quantizing with quantize255().
inline void save_ppm(const ImageTensor& image, const std::string& path) {
  if (image.channels != 3) {
    throw std::invalid_argument("save_ppm: image must have 3 channels, got " +
                                std::to_string(image.channels));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_ppm: cannot open " + path);

  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  const std::size_t n = static_cast<std::size_t>(image.pixels());
  std::vector<unsigned char> raw(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      raw[3 * i + c] = static_cast<unsigned char>(
          quantize255(image.data[static_cast<std::size_t>(c) * n + i]));
    }
  }
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("save_ppm: write failed for " + path);
}

// One flattened channel, row major: element (h, w) lands at index h*W + w.
inline std::vector<double> flatten_channel(const ImageTensor& image, int c) {
  const auto plane = image.channel(c);
  return {plane.begin(), plane.end()};
}

inline void unflatten_channel(std::span<const double> values,
                              ImageTensor& image, int c) {
  auto plane = image.channel(c);
  if (values.size() != plane.size()) {
    throw std::invalid_argument("unflatten_channel: expected " +
                                std::to_string(plane.size()) + " values, got " +
                                std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), plane.begin());
}

namespace detail {

// Source sample pair for one output coordinate under the half-pixel mapping
// src = (dst + 0.5) * in/out - 0.5, edge-clamped.
struct LerpTap {
  int lo;
  int hi;
  double w;  // weight of hi; lo gets 1 - w
};

inline LerpTap resize_tap(int dst, int out_n, int in_n) {
  const double src = (dst + 0.5) * (static_cast<double>(in_n) / out_n) - 0.5;
  const int f = static_cast<int>(std::floor(src));
  return {std::clamp(f, 0, in_n - 1), std::clamp(f + 1, 0, in_n - 1), src - f};
}

}  // namespace detail

// Bilinear resize. Outputs are convex combinations of inputs, so values stay
// inside [min, max] of the source.
inline ImageTensor resize_bilinear(const ImageTensor& image, int out_h,
                                   int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument("resize_bilinear: output size must be >= 1");
  }
  ImageTensor out(image.channels, out_h, out_w);
  std::vector<detail::LerpTap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = detail::resize_tap(x, out_w, image.width);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < out_h; ++y) {
      const auto ty = detail::resize_tap(y, out_h, image.height);
      for (int x = 0; x < out_w; ++x) {
        const auto& tx = xs[x];
        const double top = (1.0 - tx.w) * image.at(c, ty.lo, tx.lo) +
                           tx.w * image.at(c, ty.lo, tx.hi);
        const double bot = (1.0 - tx.w) * image.at(c, ty.hi, tx.lo) +
                           tx.w * image.at(c, ty.hi, tx.hi);
        out.at(c, y, x) = (1.0 - ty.w) * top + ty.w * bot;
      }
    }
  }
  return out;
}

// Adjoint of resize_bilinear: scatters each output gradient back to its
// source taps with the same weights. Needed so training losses reach the
// layers that run at native resolution.
inline std::vector<double> resize_bilinear_backward(
    std::span<const double> grad_out, int channels, int out_h, int out_w,
    int in_h, int in_w) {
  if (grad_out.size() !=
      static_cast<std::size_t>(channels) * out_h * out_w) {
    throw std::invalid_argument("resize_bilinear_backward: gradient size " +
                                std::to_string(grad_out.size()) +
                                " does not match " + std::to_string(channels) +
                                "x" + std::to_string(out_h) + "x" +
                                std::to_string(out_w));
  }
  std::vector<double> grad_in(
      static_cast<std::size_t>(channels) * in_h * in_w, 0.0);
  std::vector<detail::LerpTap> xs(out_w);
  for (int x = 0; x < out_w; ++x) xs[x] = detail::resize_tap(x, out_w, in_w);
  for (int c = 0; c < channels; ++c) {
    double* plane = grad_in.data() + static_cast<std::size_t>(c) * in_h * in_w;
    const double* gplane =
        grad_out.data() + static_cast<std::size_t>(c) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const auto ty = detail::resize_tap(y, out_h, in_h);
      for (int x = 0; x < out_w; ++x) {
        const auto& tx = xs[x];
        const double g = gplane[y * out_w + x];
        plane[ty.lo * in_w + tx.lo] += (1.0 - ty.w) * (1.0 - tx.w) * g;
        plane[ty.lo * in_w + tx.hi] += (1.0 - ty.w) * tx.w * g;
        plane[ty.hi * in_w + tx.lo] += ty.w * (1.0 - tx.w) * g;
        plane[ty.hi * in_w + tx.hi] += ty.w * tx.w * g;
      }
    }
  }
  return grad_in;
}

inline ImageTensor flip_horizontal(const ImageTensor& image) {
  ImageTensor out(image.channels, image.height, image.width);
  for (int c = 0; c < image.channels; ++c) {
    for (int h = 0; h < image.height; ++h) {
      for (int w = 0; w < image.width; ++w) {
        out.at(c, h, w) = image.at(c, h, image.width - 1 - w);
      }
    }
  }
  return out;
}

}  // namespace phm
