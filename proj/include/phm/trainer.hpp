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
#include <tuple>
#include <utility>
#include <vector>

#include "phm/classifier.hpp"
#include "phm/dataset.hpp"
#include "phm/image.hpp"
#include "phm/optim.hpp"
#include "phm/param_hm.hpp"
#include "phm/rng.hpp"

// End-to-end training of the classifier together with the parametric
// histogram matcher. Per sample the chain is
//
//   image -> [flip] -> distribution matcher -> resize to 32x32
//         -> classifier -> cross entropy,
//
// and the backward pass runs the same chain in reverse; the resize adjoint
// carries the loss gradient back to native resolution where the matcher's
// parameter gradient is accumulated. One SGD configuration updates both the
// classifier weights and the target distribution.

namespace phm {

inline constexpr int kClassifierInput = 32;

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  // 1-based epoch -> learning-rate multiplier, applied entering that epoch.
  // Defaults are a scale-down of the 175-epoch recipe (x0.1 at 50 and 100).
  std::vector<std::pair<int, double>> lr_drops{{15, 0.1}, {25, 0.1}};
  std::uint64_t seed = 0;
  int param_size = 2048;  // s
  bool phm_enabled = true;
  bool augment = true;  // horizontal flip only
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  TinyClassifier model;
  ParamContainer params;
  std::vector<EpochMetrics> metrics;
};

// Ties broken toward the smallest class index.
inline int argmax_logit(std::span<const double> logits) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(logits.size()); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

namespace detail {

// Sub-stream ids hung off TrainConfig::seed. The model draw and the shuffle
// stream are separated so reproducing the initial model does not require
// replaying the training loop.
inline constexpr std::uint64_t kModelStream = 1;
inline constexpr std::uint64_t kShuffleStream = 2;

inline int dataset_classes(const std::vector<LabeledSample>& dataset,
                           const char* who) {
  if (dataset.empty()) {
    throw std::invalid_argument(std::string(who) + ": empty dataset");
  }
  int num_classes = 0;
  for (const auto& s : dataset) {
    if (s.label < 0) {
      throw std::invalid_argument(std::string(who) + ": negative label");
    }
    num_classes = std::max(num_classes, s.label + 1);
  }
  return num_classes;
}

inline void accumulate(std::vector<double>& acc,
                       std::span<const double> update) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += update[i];
}

inline void scale(std::vector<double>& acc, double factor) {
  for (double& v : acc) v *= factor;
}

}  // namespace detail

// Initial model used by train() for a given config; exposed so callers can
// reproduce the untrained starting point.
inline TinyClassifier initial_model(const TrainConfig& config,
                                    int num_classes) {
  return init_classifier(num_classes,
                         derive_seed(config.seed, detail::kModelStream));
}

inline TrainResult train(const std::vector<LabeledSample>& dataset,
                         const TrainConfig& config) {
  if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (config.batch_size < 1) {
    throw std::invalid_argument("train: batch_size must be >= 1");
  }
  const int num_classes = detail::dataset_classes(dataset, "train");
  {
    std::vector<int> per_class(num_classes, 0);
    for (const auto& s : dataset) ++per_class[s.label];
    for (int k = 0; k < num_classes; ++k) {
      if (per_class[k] == 0) {
        throw std::invalid_argument("train: class " + std::to_string(k) +
                                    " has no samples");
      }
    }
  }

  TrainResult result;
  result.model = initial_model(config, num_classes);
  result.params = init_linear_ramp(kClassifierChannels, config.param_size);
  TinyClassifier& model = result.model;
  ParamContainer& pc = result.params;

  SgdState sgd;
  {
    double lr = sgd.lr;
    for (const auto& [epoch, factor] : config.lr_drops) {
      lr *= factor;
      sgd.schedule[epoch] = lr;
    }
  }

  // Parameter groups share one optimizer; group 6 is the target distribution.
  std::vector<std::vector<double>*> groups = {
      &model.conv1_weight, &model.conv1_bias, &model.conv2_weight,
      &model.conv2_bias,   &model.fc_weight,  &model.fc_bias};
  if (config.phm_enabled) groups.push_back(&pc.values);

  std::vector<std::vector<double>> velocity(groups.size());
  std::vector<std::vector<double>> grad_acc(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    grad_acc[g].resize(groups[g]->size());
  }

  Rng rng(derive_seed(config.seed, detail::kShuffleStream));
  const int n = static_cast<int>(dataset.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (const auto it = sgd.schedule.find(epoch); it != sgd.schedule.end()) {
      sgd.lr = it->second;
    }
    rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += config.batch_size) {
      const int batch = std::min(config.batch_size, n - start);
      for (auto& acc : grad_acc) std::fill(acc.begin(), acc.end(), 0.0);

      for (int b = 0; b < batch; ++b) {
        const LabeledSample& sample = dataset[order[start + b]];
        ImageTensor flipped;
        const ImageTensor* raw = &sample.image;
        if (config.augment && rng.uniform01() < 0.5) {
          flipped = flip_horizontal(sample.image);
          raw = &flipped;
        }

        ImageTensor transformed;
        SortCache cache;
        if (config.phm_enabled) {
          std::tie(transformed, cache) = phm_forward(*raw, pc);
          raw = &transformed;
        }
        const ImageTensor small =
            resize_bilinear(*raw, kClassifierInput, kClassifierInput);

        ClassifierCache ccache;
        const std::vector<double> logits =
            classifier_forward(small, model, &ccache);
        const CrossEntropyResult ce = cross_entropy(logits, sample.label);
        loss_sum += ce.loss;
        if (argmax_logit(logits) == sample.label) ++correct;

        const ClassifierGrads grads =
            classifier_backward(ce.grad_logits, ccache, model);
        detail::accumulate(grad_acc[0], grads.conv1_weight);
        detail::accumulate(grad_acc[1], grads.conv1_bias);
        detail::accumulate(grad_acc[2], grads.conv2_weight);
        detail::accumulate(grad_acc[3], grads.conv2_bias);
        detail::accumulate(grad_acc[4], grads.fc_weight);
        detail::accumulate(grad_acc[5], grads.fc_bias);
        if (config.phm_enabled) {
          const std::vector<double> grad_native = resize_bilinear_backward(
              grads.input, kClassifierChannels, kClassifierInput,
              kClassifierInput, raw->height, raw->width);
          detail::accumulate(grad_acc[6], phm_backward(grad_native, cache, pc));
        }
      }

      // Batch gradient is the mean over samples.
      const double inv = 1.0 / batch;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        detail::scale(grad_acc[g], inv);
        sgd_step(*groups[g], grad_acc[g], velocity[g], sgd);
      }
    }

    result.metrics.push_back({epoch, loss_sum / n,
                              static_cast<double>(correct) / n, sgd.lr});
  }
  return result;
}

// Top-1 accuracy of the (preprocessor, classifier) pair on a dataset.
inline double evaluate(const TinyClassifier& model, const ParamContainer& pc,
                       const std::vector<LabeledSample>& dataset,
                       bool phm_enabled) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  int correct = 0;
  for (const auto& sample : dataset) {
    const ImageTensor transformed =
        phm_enabled ? phm_forward(sample.image, pc).first : sample.image;
    const std::vector<double> logits = classifier_forward(
        resize_bilinear(transformed, kClassifierInput, kClassifierInput),
        model);
    if (argmax_logit(logits) == sample.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

// One row per epoch: epoch,loss,train_acc,lr.
inline void write_metrics_csv(const std::vector<EpochMetrics>& metrics,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "epoch,loss,train_acc,lr\n";
  char line[128];
  for (const auto& m : metrics) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g\n", m.epoch,
                  m.loss, m.train_acc, m.lr);
    out << line;
  }
  if (!out) {
    throw std::runtime_error("write_metrics_csv: write failed for " + path);
  }
}

}  // namespace phm
