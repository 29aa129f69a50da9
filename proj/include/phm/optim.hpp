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
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phm {

struct CrossEntropyResult {
  double loss;
  std::vector<double> grad_logits;  // softmax(logits) - onehot(label)
};

// Cross entropy of one sample, computed with max subtraction so large logits
// do not overflow the exponentials.
inline CrossEntropyResult cross_entropy(std::span<const double> logits,
                                        int label) {
  if (logits.empty()) {
    throw std::invalid_argument("cross_entropy: empty logits");
  }
  if (label < 0 || label >= static_cast<int>(logits.size())) {
    throw std::out_of_range("cross_entropy: label " + std::to_string(label) +
                            " out of range [0, " +
                            std::to_string(logits.size()) + ")");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  CrossEntropyResult r{0.0, std::vector<double>(logits.size())};
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    r.grad_logits[k] = std::exp(logits[k] - peak);
    sum += r.grad_logits[k];
  }
  r.loss = std::log(sum) - (logits[label] - peak);
  for (std::size_t k = 0; k < logits.size(); ++k) r.grad_logits[k] /= sum;
  r.grad_logits[label] -= 1.0;
  return r;
}

// SGD with momentum; weight decay enters through the gradient (classic L2):
//   v <- momentum * v + g + weight_decay * p
//   p <- p - lr * v
struct SgdState {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<int, double> schedule;  // epoch -> learning rate, trainer-applied
};

inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     std::vector<double>& velocity, const SgdState& state) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("sgd_step: " + std::to_string(params.size()) +
                                " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (state.lr <= 0.0) {
    throw std::invalid_argument("sgd_step: learning rate must be positive");
  }
  if (velocity.empty()) {
    velocity.assign(params.size(), 0.0);
  } else if (velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: velocity buffer size mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double v =
        state.momentum * velocity[i] + grads[i] + state.weight_decay * params[i];
    velocity[i] = v;
    params[i] -= state.lr * v;
  }
}

}  // namespace phm
