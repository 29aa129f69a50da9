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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "phm/image.hpp"
#include "phm/rng.hpp"

// Synthetic labeled images and parametric degradations. Classes are
// (shape, hue band) pairs rendered on textured backgrounds; degradations are
// fixed closed-form analogues of adverse capture conditions so that
// train-on-clean / test-on-degraded experiments are fully reproducible.

namespace phm {

inline constexpr int kImageSize = 64;
inline constexpr int kNumShapes = 5;  // circle, square, triangle, cross, ring
inline constexpr int kMaxClasses = 10;

struct LabeledSample {
  ImageTensor image;
  int label = 0;
};

enum class DegradeKind { kLowlight, kFog, kSand, kSnowNoise };

struct DegradeSpec {
  DegradeKind kind = DegradeKind::kFog;
  double severity = 0.0;  // in [0, 1]
};

inline std::string to_string(DegradeKind kind) {
  switch (kind) {
    case DegradeKind::kLowlight: return "lowlight";
    case DegradeKind::kFog: return "fog";
    case DegradeKind::kSand: return "sand";
    case DegradeKind::kSnowNoise: return "snow-noise";
  }
  return "unknown";
}

inline DegradeKind degrade_kind_from_string(const std::string& name) {
  if (name == "lowlight") return DegradeKind::kLowlight;
  if (name == "fog") return DegradeKind::kFog;
  if (name == "sand") return DegradeKind::kSand;
  if (name == "snow-noise") return DegradeKind::kSnowNoise;
  throw std::invalid_argument(
      "unknown degradation '" + name +
      "' (expected lowlight, fog, sand or snow-noise)");
}

namespace detail {

// Signed distances in shape-local coordinates, negative inside. Shapes are
// sized to roughly comparable areas at unit scale.
inline double sd_circle(double x, double y) { return std::hypot(x, y) - 1.0; }

inline double sd_ring(double x, double y) {
  return std::abs(std::hypot(x, y) - 0.76) - 0.26;
}

inline double sd_box(double x, double y, double bx, double by) {
  const double dx = std::abs(x) - bx;
  const double dy = std::abs(y) - by;
  return std::hypot(std::max(dx, 0.0), std::max(dy, 0.0)) +
         std::min(std::max(dx, dy), 0.0);
}

inline double sd_square(double x, double y) { return sd_box(x, y, 0.82, 0.82); }

inline double sd_cross(double x, double y) {
  return std::min(sd_box(x, y, 1.0, 0.36), sd_box(x, y, 0.36, 1.0));
}

inline double sd_triangle(double x, double y) {
  const double k = std::sqrt(3.0);
  const double r = 0.95;
  x = std::abs(x) - r;
  y = y + r / k;
  if (x + k * y > 0.0) {
    const double nx = (x - k * y) / 2.0;
    const double ny = (-k * x - y) / 2.0;
    x = nx;
    y = ny;
  }
  x -= std::clamp(x, -2.0 * r, 0.0);
  const double len = std::hypot(x, y);
  return y > 0.0 ? -len : len;
}

inline double shape_distance(int shape_id, double x, double y) {
  switch (shape_id) {
    case 0: return sd_circle(x, y);
    case 1: return sd_square(x, y);
    case 2: return sd_triangle(x, y);
    case 3: return sd_cross(x, y);
    default: return sd_ring(x, y);
  }
}

inline double lerp(double a, double b, double t) { return a + (b - a) * t; }

// One 3x64x64 sample: a tinted bilinear-gradient background with grain, and
// one shape from the class's (shape, hue) pair at a random pose.
inline ImageTensor render_sample(int shape_id, int hue_band, Rng& rng) {
  ImageTensor img(3, kImageSize, kImageSize);

  double corner[4];
  for (double& v : corner) v = rng.uniform(0.18, 0.95);
  double tint[3];
  for (double& v : tint) v = rng.uniform(0.55, 1.0);

  double color[3];
  if (hue_band == 0) {  // warm
    color[0] = rng.uniform(0.72, 0.96);
    color[1] = rng.uniform(0.2, 0.45);
    color[2] = rng.uniform(0.04, 0.28);
  } else {  // cool
    color[0] = rng.uniform(0.04, 0.28);
    color[1] = rng.uniform(0.25, 0.5);
    color[2] = rng.uniform(0.72, 0.96);
  }

  const double cx = rng.uniform(0.34, 0.66) * kImageSize;
  const double cy = rng.uniform(0.34, 0.66) * kImageSize;
  const double radius = rng.uniform(0.17, 0.29) * kImageSize;
  const double angle = rng.uniform(-0.4, 0.4);
  const double ca = std::cos(angle), sa = std::sin(angle);

  for (int y = 0; y < kImageSize; ++y) {
    const double gy = y / (kImageSize - 1.0);
    for (int x = 0; x < kImageSize; ++x) {
      const double gx = x / (kImageSize - 1.0);
      const double lum = lerp(lerp(corner[0], corner[1], gx),
                              lerp(corner[2], corner[3], gx), gy);

      const double dx = (x - cx) / radius;
      const double dy = (y - cy) / radius;
      const double rx = ca * dx + sa * dy;
      const double ry = -sa * dx + ca * dy;
      const double sd_px = shape_distance(shape_id, rx, ry) * radius;
      const double alpha = std::clamp(0.5 - sd_px / 1.2, 0.0, 1.0);
      // Radial shading keeps the fill from being a flat color.
      const double shade = 0.78 + 0.3 * std::clamp(1.0 - std::hypot(rx, ry) / 2.0, 0.0, 1.0);

      const double grain = (rng.uniform01() - 0.5) * 0.1;
      for (int c = 0; c < 3; ++c) {
        const double bg = lum * tint[c];
        const double fg = std::min(color[c] * shade, 1.0);
        img.at(c, y, x) =
            std::clamp(alpha * fg + (1.0 - alpha) * bg + grain, 0.0, 1.0);
      }
    }
  }
  return img;
}

}  // namespace detail

// Deterministic dataset of (shape, hue) classes. Class k renders shape
// k % 5 in hue band k / 5; samples are seeded per index so generation order
// and parallelization cannot change the pixels.
inline std::vector<LabeledSample> generate_shapes_dataset(int num_classes,
                                                          int per_class,
                                                          std::uint64_t seed) {
  if (num_classes < 1 || num_classes > kMaxClasses) {
    throw std::invalid_argument(
        "generate_shapes_dataset: class count must be in [1, " +
        std::to_string(kMaxClasses) + "], got " + std::to_string(num_classes));
  }
  if (per_class < 1) {
    throw std::invalid_argument(
        "generate_shapes_dataset: per_class must be >= 1");
  }
  std::vector<LabeledSample> out;
  out.reserve(static_cast<std::size_t>(num_classes) * per_class);
  for (int label = 0; label < num_classes; ++label) {
    for (int i = 0; i < per_class; ++i) {
      const std::uint64_t index =
          static_cast<std::uint64_t>(label) * per_class + i;
      Rng rng(derive_seed(seed, index));
      out.push_back(
          {detail::render_sample(label % kNumShapes, label / kNumShapes, rng),
           label});
    }
  }
  return out;
}

// Closed-form degradations, all mapping [0,1] into [0,1]:
//   lowlight   v -> (v * (1 - 0.8 s))^(1 + 2 s)
//   fog        v -> v (1 - 0.7 s) + 0.7 s
//   sand       fog with per-channel strength weights (1.0, 0.85, 0.6),
//              which casts the blend toward a tan tint
//   snow-noise fog at 0.5 s plus seeded per-pixel uniform noise of
//              amplitude 0.2 s, clamped
// Severity 0 returns the input unchanged, exactly.
inline ImageTensor degrade(const ImageTensor& image, const DegradeSpec& spec,
                           std::uint64_t seed) {
  if (!(spec.severity >= 0.0 && spec.severity <= 1.0)) {
    throw std::invalid_argument("degrade: severity must be in [0, 1], got " +
                                std::to_string(spec.severity));
  }
  if (spec.severity == 0.0) return image;

  const double sev = spec.severity;
  ImageTensor out = image;
  switch (spec.kind) {
    case DegradeKind::kLowlight: {
      const double gain = 1.0 - 0.8 * sev;
      const double gamma = 1.0 + 2.0 * sev;
      for (double& v : out.data) v = std::pow(v * gain, gamma);
      break;
    }
    case DegradeKind::kFog: {
      const double blend = 0.7 * sev;
      for (double& v : out.data) v = v * (1.0 - blend) + blend;
      break;
    }
    case DegradeKind::kSand: {
      static constexpr double kSandWeight[3] = {1.0, 0.85, 0.6};
      for (int c = 0; c < out.channels; ++c) {
        const double blend = 0.7 * sev * kSandWeight[std::min(c, 2)];
        for (double& v : out.channel(c)) v = v * (1.0 - blend) + blend;
      }
      break;
    }
    case DegradeKind::kSnowNoise: {
      const double blend = 0.35 * sev;  // fog at half severity
      const double amp = 0.2 * sev;
      Rng rng(seed);
      const int n = out.pixels();
      for (int i = 0; i < n; ++i) {
        const double noise = (2.0 * rng.uniform01() - 1.0) * amp;
        for (int c = 0; c < out.channels; ++c) {
          double& v = out.data[static_cast<std::size_t>(c) * n + i];
          v = std::clamp(v * (1.0 - blend) + blend + noise, 0.0, 1.0);
        }
      }
      break;
    }
  }
  return out;
}

inline std::vector<LabeledSample> degrade_dataset(
    const std::vector<LabeledSample>& samples, const DegradeSpec& spec,
    std::uint64_t seed) {
  std::vector<LabeledSample> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.push_back({degrade(samples[i].image, spec, derive_seed(seed, i)),
                   samples[i].label});
  }
  return out;
}

// Stratified split: per-class deterministic shuffle, floor(frac * n) samples
// to the train side. Classes are processed in ascending label order.
inline std::pair<std::vector<LabeledSample>, std::vector<LabeledSample>> split(
    const std::vector<LabeledSample>& dataset, double train_frac,
    std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw std::invalid_argument("split: train_frac must be in (0, 1), got " +
                                std::to_string(train_frac));
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].label < 0) {
      throw std::invalid_argument("split: negative label");
    }
    by_class[dataset[i].label].push_back(i);
  }
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2) {
      throw std::invalid_argument("split: class " + std::to_string(label) +
                                  " has fewer than 2 samples");
    }
  }

  Rng rng(seed);
  std::vector<LabeledSample> train, test;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    const std::size_t n_train = static_cast<std::size_t>(
        std::floor(train_frac * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i) {
      (i < n_train ? train : test).push_back(dataset[members[i]]);
    }
  }
  return {std::move(train), std::move(test)};
}

// Directory-per-class PPM export: <root>/<label>/<index>.ppm. Indices are
// zero padded so lexicographic order equals generation order.
inline void export_dataset(const std::vector<LabeledSample>& samples,
                           const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  std::map<int, int> next_index;
  char name[32];
  for (const auto& sample : samples) {
    const fs::path dir = fs::path(root) / std::to_string(sample.label);
    fs::create_directories(dir);
    std::snprintf(name, sizeof(name), "%05d.ppm", next_index[sample.label]++);
    save_ppm(sample.image, (dir / name).string());
  }
}

// Loads a directory-per-class tree; labels come from the class directory
// names sorted lexicographically.
inline std::vector<LabeledSample> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw std::runtime_error("load_dataset: " + root + " is not a directory");
  }
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) {
    throw std::runtime_error("load_dataset: no class directories in " + root);
  }

  std::vector<LabeledSample> out;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && entry.path().extension() == ".ppm") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      out.push_back({load_ppm(file.string()), static_cast<int>(label)});
    }
  }
  if (out.empty()) {
    throw std::runtime_error("load_dataset: no .ppm files under " + root);
  }
  return out;
}

}  // namespace phm
