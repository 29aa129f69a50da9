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
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "phm/image.hpp"
#include "phm/rng.hpp"

// Small fixed CNN used as the downstream classifier:
//
//   conv 3->8 (3x3, stride 1, pad 1) -> ReLU -> 2x2 average pool
//   -> conv 8->16 (3x3, stride 1, pad 1) -> ReLU -> global average pool
//   -> fully connected 16->K -> logits
//
// Global average pooling makes the weights independent of the input size, so
// the same model runs on the 32x32 training crops and on the small inputs
// the gradient checks use. Forward and backward are hand-written; gradients
// are exact reverse-mode derivatives of this architecture.

namespace phm {

inline constexpr int kClassifierChannels = 3;
inline constexpr int kConv1Filters = 8;
inline constexpr int kConv2Filters = 16;

struct TinyClassifier {
  int num_classes = 0;
  std::vector<double> conv1_weight;  // [8][3][3][3]
  std::vector<double> conv1_bias;    // [8]
  std::vector<double> conv2_weight;  // [16][8][3][3]
  std::vector<double> conv2_bias;    // [16]
  std::vector<double> fc_weight;     // [K][16]
  std::vector<double> fc_bias;       // [K]
};

namespace detail {

inline void check_model(const TinyClassifier& m, const char* who) {
  const bool ok =
      m.num_classes >= 1 &&
      m.conv1_weight.size() == kConv1Filters * kClassifierChannels * 9 &&
      m.conv1_bias.size() == kConv1Filters &&
      m.conv2_weight.size() == kConv2Filters * kConv1Filters * 9 &&
      m.conv2_bias.size() == kConv2Filters &&
      m.fc_weight.size() == static_cast<std::size_t>(m.num_classes) * kConv2Filters &&
      m.fc_bias.size() == static_cast<std::size_t>(m.num_classes);
  if (!ok) {
    throw std::invalid_argument(std::string(who) + ": malformed model");
  }
}

// 3x3 convolution, stride 1, zero padding 1; output keeps the spatial size.
// The kernel offsets are hoisted so the inner loop streams one row at a time.
inline void conv3x3_forward(const double* in, int in_c, int h, int w,
                            const double* weight, const double* bias,
                            int out_c, double* out) {
  const int plane = h * w;
  for (int oc = 0; oc < out_c; ++oc) {
    std::fill_n(out + static_cast<std::size_t>(oc) * plane, plane, bias[oc]);
  }
  for (int oc = 0; oc < out_c; ++oc) {
    double* out_plane = out + static_cast<std::size_t>(oc) * plane;
    for (int ic = 0; ic < in_c; ++ic) {
      const double* in_plane = in + static_cast<std::size_t>(ic) * plane;
      const double* k = weight + (static_cast<std::size_t>(oc) * in_c + ic) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = k[ky * 3 + kx];
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          for (int y = y0; y < y1; ++y) {
            const double* src = in_plane + (y + ky - 1) * w + (x0 + kx - 1);
            double* dst = out_plane + y * w + x0;
            for (int x = x0; x < x1; ++x) *dst++ += wv * *src++;
          }
        }
      }
    }
  }
}

// Accumulates conv gradients into caller-zeroed buffers. grad_in may be null
// when the input gradient is not needed.
inline void conv3x3_backward(const double* in, const double* grad_out,
                             int in_c, int h, int w, const double* weight,
                             int out_c, double* grad_in, double* grad_weight,
                             double* grad_bias) {
  const int plane = h * w;
  for (int oc = 0; oc < out_c; ++oc) {
    const double* g_plane = grad_out + static_cast<std::size_t>(oc) * plane;
    double acc = 0.0;
    for (int i = 0; i < plane; ++i) acc += g_plane[i];
    grad_bias[oc] += acc;
    for (int ic = 0; ic < in_c; ++ic) {
      const double* in_plane = in + static_cast<std::size_t>(ic) * plane;
      double* gin_plane =
          grad_in ? grad_in + static_cast<std::size_t>(ic) * plane : nullptr;
      const std::size_t kbase = (static_cast<std::size_t>(oc) * in_c + ic) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = std::max(0, 1 - ky), y1 = std::min(h, h + 1 - ky);
        for (int kx = 0; kx < 3; ++kx) {
          const int x0 = std::max(0, 1 - kx), x1 = std::min(w, w + 1 - kx);
          const double wv = weight[kbase + ky * 3 + kx];
          const int count = x1 - x0;
          double wacc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* src = in_plane + (y + ky - 1) * w + (x0 + kx - 1);
            const double* g = g_plane + y * w + x0;
            if (gin_plane) {
              double* gsrc = gin_plane + (y + ky - 1) * w + (x0 + kx - 1);
              for (int i = 0; i < count; ++i) {
                wacc += g[i] * src[i];
                gsrc[i] += wv * g[i];
              }
            } else {
              for (int i = 0; i < count; ++i) wacc += g[i] * src[i];
            }
          }
          grad_weight[kbase + ky * 3 + kx] += wacc;
        }
      }
    }
  }
}

}  // namespace detail

// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)] per layer, drawn in
// declaration order from one seeded stream.
inline TinyClassifier init_classifier(int num_classes, std::uint64_t seed) {
  if (num_classes < 1) {
    throw std::invalid_argument("init_classifier: need at least one class");
  }
  TinyClassifier m;
  m.num_classes = num_classes;
  m.conv1_weight.resize(kConv1Filters * kClassifierChannels * 9);
  m.conv1_bias.resize(kConv1Filters);
  m.conv2_weight.resize(kConv2Filters * kConv1Filters * 9);
  m.conv2_bias.resize(kConv2Filters);
  m.fc_weight.resize(static_cast<std::size_t>(num_classes) * kConv2Filters);
  m.fc_bias.resize(num_classes);

  Rng rng(seed);
  const auto fill = [&rng](std::vector<double>& v, double bound) {
    for (double& x : v) x = rng.uniform(-bound, bound);
  };
  const double b1 = std::sqrt(1.0 / (kClassifierChannels * 9));
  const double b2 = std::sqrt(1.0 / (kConv1Filters * 9));
  const double b3 = std::sqrt(1.0 / kConv2Filters);
  fill(m.conv1_weight, b1);
  fill(m.conv1_bias, b1);
  fill(m.conv2_weight, b2);
  fill(m.conv2_bias, b2);
  fill(m.fc_weight, b3);
  fill(m.fc_bias, b3);
  return m;
}

// Activations retained for the backward pass. Pre-activation maps are kept
// instead of ReLU outputs; the masks are recomputed from the sign.
struct ClassifierCache {
  int height = 0;
  int width = 0;
  std::vector<double> input;     // 3 x H x W
  std::vector<double> z1;        // 8 x H x W, pre-ReLU
  std::vector<double> pooled;    // 8 x H/2 x W/2
  std::vector<double> z2;        // 16 x H/2 x W/2, pre-ReLU
  std::vector<double> features;  // 16, global average of relu(z2)
  std::vector<double> logits;    // K
};

inline std::vector<double> classifier_forward(const ImageTensor& input,
                                              const TinyClassifier& model,
                                              ClassifierCache* cache = nullptr) {
  detail::check_model(model, "classifier_forward");
  if (input.channels != kClassifierChannels) {
    throw std::invalid_argument("classifier_forward: expected 3 channels, got " +
                                std::to_string(input.channels));
  }
  if (input.height < 2 || input.width < 2 || input.height % 2 != 0 ||
      input.width % 2 != 0) {
    throw std::invalid_argument(
        "classifier_forward: spatial size must be even and >= 2, got " +
        std::to_string(input.height) + "x" + std::to_string(input.width));
  }

  const int h = input.height, w = input.width;
  const int plane = h * w;
  const int ph = h / 2, pw = w / 2;
  const int pplane = ph * pw;

  std::vector<double> z1(static_cast<std::size_t>(kConv1Filters) * plane);
  detail::conv3x3_forward(input.data.data(), kClassifierChannels, h, w,
                          model.conv1_weight.data(), model.conv1_bias.data(),
                          kConv1Filters, z1.data());

  std::vector<double> a1(z1.size());
  for (std::size_t i = 0; i < z1.size(); ++i) a1[i] = std::max(z1[i], 0.0);

  std::vector<double> pooled(static_cast<std::size_t>(kConv1Filters) * pplane);
  for (int c = 0; c < kConv1Filters; ++c) {
    const double* src = a1.data() + static_cast<std::size_t>(c) * plane;
    double* dst = pooled.data() + static_cast<std::size_t>(c) * pplane;
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        const double* quad = src + (2 * y) * w + 2 * x;
        dst[y * pw + x] =
            0.25 * (quad[0] + quad[1] + quad[w] + quad[w + 1]);
      }
    }
  }

  std::vector<double> z2(static_cast<std::size_t>(kConv2Filters) * pplane);
  detail::conv3x3_forward(pooled.data(), kConv1Filters, ph, pw,
                          model.conv2_weight.data(), model.conv2_bias.data(),
                          kConv2Filters, z2.data());

  std::vector<double> features(kConv2Filters);
  for (int c = 0; c < kConv2Filters; ++c) {
    const double* src = z2.data() + static_cast<std::size_t>(c) * pplane;
    double acc = 0.0;
    for (int i = 0; i < pplane; ++i) acc += std::max(src[i], 0.0);
    features[c] = acc / pplane;
  }

  std::vector<double> logits(model.num_classes);
  for (int k = 0; k < model.num_classes; ++k) {
    double acc = model.fc_bias[k];
    const double* row =
        model.fc_weight.data() + static_cast<std::size_t>(k) * kConv2Filters;
    for (int j = 0; j < kConv2Filters; ++j) acc += row[j] * features[j];
    logits[k] = acc;
  }

  if (cache) {
    cache->height = h;
    cache->width = w;
    cache->input = input.data;
    cache->z1 = std::move(z1);
    cache->pooled = std::move(pooled);
    cache->z2 = std::move(z2);
    cache->features = features;
    cache->logits = logits;
  }
  return logits;
}

struct ClassifierGrads {
  std::vector<double> conv1_weight, conv1_bias;
  std::vector<double> conv2_weight, conv2_bias;
  std::vector<double> fc_weight, fc_bias;
  std::vector<double> input;  // 3 x H x W, feeds the preprocessing backward
};

inline ClassifierGrads classifier_backward(std::span<const double> grad_logits,
                                           const ClassifierCache& cache,
                                           const TinyClassifier& model) {
  detail::check_model(model, "classifier_backward");
  const int h = cache.height, w = cache.width;
  const int plane = h * w;
  const int ph = h / 2, pw = w / 2;
  const int pplane = ph * pw;
  const bool cache_ok =
      h >= 2 && w >= 2 &&
      cache.input.size() == static_cast<std::size_t>(kClassifierChannels) * plane &&
      cache.z1.size() == static_cast<std::size_t>(kConv1Filters) * plane &&
      cache.pooled.size() == static_cast<std::size_t>(kConv1Filters) * pplane &&
      cache.z2.size() == static_cast<std::size_t>(kConv2Filters) * pplane &&
      cache.features.size() == static_cast<std::size_t>(kConv2Filters) &&
      cache.logits.size() == static_cast<std::size_t>(model.num_classes);
  if (!cache_ok) {
    throw std::invalid_argument(
        "classifier_backward: cache is stale or does not match the model");
  }
  if (grad_logits.size() != static_cast<std::size_t>(model.num_classes)) {
    throw std::invalid_argument("classifier_backward: grad_logits has " +
                                std::to_string(grad_logits.size()) +
                                " entries, expected " +
                                std::to_string(model.num_classes));
  }

  ClassifierGrads g;
  g.conv1_weight.assign(model.conv1_weight.size(), 0.0);
  g.conv1_bias.assign(model.conv1_bias.size(), 0.0);
  g.conv2_weight.assign(model.conv2_weight.size(), 0.0);
  g.conv2_bias.assign(model.conv2_bias.size(), 0.0);
  g.fc_weight.assign(model.fc_weight.size(), 0.0);
  g.fc_bias.assign(model.fc_bias.size(), 0.0);
  g.input.assign(cache.input.size(), 0.0);

  // Fully connected layer and its input gradient.
  std::vector<double> dfeat(kConv2Filters, 0.0);
  for (int k = 0; k < model.num_classes; ++k) {
    const double gl = grad_logits[k];
    g.fc_bias[k] = gl;
    const std::size_t row = static_cast<std::size_t>(k) * kConv2Filters;
    for (int j = 0; j < kConv2Filters; ++j) {
      g.fc_weight[row + j] = gl * cache.features[j];
      dfeat[j] += gl * model.fc_weight[row + j];
    }
  }

  // Global average pool, then ReLU mask of z2.
  std::vector<double> dz2(cache.z2.size());
  for (int c = 0; c < kConv2Filters; ++c) {
    const double spread = dfeat[c] / pplane;
    const double* z = cache.z2.data() + static_cast<std::size_t>(c) * pplane;
    double* dst = dz2.data() + static_cast<std::size_t>(c) * pplane;
    for (int i = 0; i < pplane; ++i) dst[i] = z[i] > 0.0 ? spread : 0.0;
  }

  std::vector<double> dpooled(cache.pooled.size(), 0.0);
  detail::conv3x3_backward(cache.pooled.data(), dz2.data(), kConv1Filters, ph,
                           pw, model.conv2_weight.data(), kConv2Filters,
                           dpooled.data(), g.conv2_weight.data(),
                           g.conv2_bias.data());

  // 2x2 average pool spreads each gradient evenly, then ReLU mask of z1.
  std::vector<double> dz1(cache.z1.size());
  for (int c = 0; c < kConv1Filters; ++c) {
    const double* dp = dpooled.data() + static_cast<std::size_t>(c) * pplane;
    const double* z = cache.z1.data() + static_cast<std::size_t>(c) * plane;
    double* dst = dz1.data() + static_cast<std::size_t>(c) * plane;
    for (int y = 0; y < ph; ++y) {
      for (int x = 0; x < pw; ++x) {
        const double quarter = 0.25 * dp[y * pw + x];
        double* quad = dst + (2 * y) * w + 2 * x;
        quad[0] = quarter;
        quad[1] = quarter;
        quad[w] = quarter;
        quad[w + 1] = quarter;
      }
    }
    for (int i = 0; i < plane; ++i) {
      if (z[i] <= 0.0) dst[i] = 0.0;
    }
  }

  detail::conv3x3_backward(cache.input.data(), dz1.data(), kClassifierChannels,
                           h, w, model.conv1_weight.data(), kConv1Filters,
                           g.input.data(), g.conv1_weight.data(),
                           g.conv1_bias.data());
  return g;
}

// Text checkpoint, header "TCN1 <K>" then every weight in declaration order.
inline void save_model(const TinyClassifier& model, const std::string& path) {
  detail::check_model(model, "save_model");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << "TCN1 " << model.num_classes << "\n";
  char line[64];
  for (const auto* group :
       {&model.conv1_weight, &model.conv1_bias, &model.conv2_weight,
        &model.conv2_bias, &model.fc_weight, &model.fc_bias}) {
    for (const double v : *group) {
      std::snprintf(line, sizeof(line), "%.12g\n", v);
      out << line;
    }
  }
  if (!out) throw std::runtime_error("save_model: write failed for " + path);
}

inline TinyClassifier load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  std::string magic;
  int num_classes = 0;
  in >> magic >> num_classes;
  if (magic != "TCN1" || !in || num_classes < 1) {
    throw std::runtime_error(path + ": line 1: bad TCN1 header");
  }
  TinyClassifier m;
  m.num_classes = num_classes;
  m.conv1_weight.resize(kConv1Filters * kClassifierChannels * 9);
  m.conv1_bias.resize(kConv1Filters);
  m.conv2_weight.resize(kConv2Filters * kConv1Filters * 9);
  m.conv2_bias.resize(kConv2Filters);
  m.fc_weight.resize(static_cast<std::size_t>(num_classes) * kConv2Filters);
  m.fc_bias.resize(num_classes);
  for (auto* group : {&m.conv1_weight, &m.conv1_bias, &m.conv2_weight,
                      &m.conv2_bias, &m.fc_weight, &m.fc_bias}) {
    for (double& v : *group) {
      if (!(in >> v)) {
        throw std::runtime_error(path + ": truncated TCN1 weight data");
      }
      if (!std::isfinite(v)) {
        throw std::runtime_error(path + ": non-finite TCN1 weight");
      }
    }
  }
  std::string extra;
  if (in >> extra) {
    throw std::runtime_error(path + ": trailing data after TCN1 weights");
  }
  return m;
}

}  // namespace phm
