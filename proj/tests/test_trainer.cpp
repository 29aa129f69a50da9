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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <vector>

#include "phm/trainer.hpp"
#include "test_util.hpp"

using phm::ImageTensor;
using phm::LabeledSample;
using phm::TrainConfig;

namespace {

// Full composite loss for a fixed batch: mean cross entropy after
// phm -> resize -> classifier. Drives the end-to-end gradient check.
double composite_loss(const std::vector<LabeledSample>& batch,
                      const phm::TinyClassifier& model,
                      const phm::ParamContainer& pc) {
  double total = 0.0;
  for (const auto& sample : batch) {
    const auto transformed = phm::phm_forward(sample.image, pc).first;
    const auto logits = phm::classifier_forward(
        phm::resize_bilinear(transformed, phm::kClassifierInput,
                             phm::kClassifierInput),
        model);
    total += phm::cross_entropy(logits, sample.label).loss;
  }
  return total / static_cast<double>(batch.size());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("argmax breaks ties toward the smallest index") {
  CHECK(phm::argmax_logit(std::vector<double>{0.0, 0.0, 0.0}) == 0);
  CHECK(phm::argmax_logit(std::vector<double>{1.0, 3.0, 3.0}) == 1);
  CHECK(phm::argmax_logit(std::vector<double>{-1.0, -3.0}) == 0);
}

TEST_CASE("train validates its inputs") {
  TrainConfig config;
  config.epochs = 1;
  CHECK_THROWS_AS(phm::train({}, config), std::invalid_argument);

  // Class 1 missing.
  std::vector<LabeledSample> gap;
  gap.push_back({ImageTensor(3, 4, 4, 0.2), 0});
  gap.push_back({ImageTensor(3, 4, 4, 0.8), 2});
  CHECK_THROWS_WITH(phm::train(gap, config),
                    Catch::Matchers::ContainsSubstring("class 1"));
}

TEST_CASE("disabled phm leaves the parameters at the ramp init") {
  const auto data = phm::generate_shapes_dataset(4, 4, 21);
  TrainConfig config;
  config.epochs = 2;
  config.batch_size = 8;
  config.param_size = 32;
  config.phm_enabled = false;
  config.seed = 3;
  const auto result = phm::train(data, config);
  const auto ramp = phm::init_linear_ramp(3, 32);
  CHECK(result.params.values == ramp.values);
}

TEST_CASE("first-epoch full-batch loss equals the untrained forward loss") {
  const auto data = phm::generate_shapes_dataset(3, 4, 31);
  TrainConfig config;
  config.epochs = 1;
  config.batch_size = static_cast<int>(data.size());  // one batch per epoch
  config.param_size = 16;
  config.phm_enabled = false;
  config.augment = false;
  config.seed = 5;

  const auto result = phm::train(data, config);

  // Rebuild the untrained model with the same derivation and evaluate the
  // dataset by hand; a full batch makes the epoch mean order-invariant.
  const auto model = phm::initial_model(config, 3);
  double expected = 0.0;
  for (const auto& sample : data) {
    const auto logits = phm::classifier_forward(
        phm::resize_bilinear(sample.image, phm::kClassifierInput,
                             phm::kClassifierInput),
        model);
    expected += phm::cross_entropy(logits, sample.label).loss;
  }
  expected /= static_cast<double>(data.size());
  REQUIRE(result.metrics.size() == 1);
  CHECK(result.metrics[0].loss == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("training reduces the loss on the synthetic dataset") {
  for (const std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto data = phm::generate_shapes_dataset(10, 20, seed);
    TrainConfig config;
    config.epochs = 10;
    config.lr_drops = {};
    config.param_size = 64;
    config.seed = seed;
    const auto result = phm::train(data, config);
    REQUIRE(result.metrics.size() == 10);
    CHECK(result.metrics[9].loss < result.metrics[0].loss);
  }
}

TEST_CASE("gradient reaches the target distribution through the full chain") {
  const auto data = phm::generate_shapes_dataset(4, 2, 41);
  const auto pc = phm::init_linear_ramp(3, 32);
  const auto model = phm::init_classifier(4, 17);

  double mass = 0.0;
  for (const auto& sample : data) {
    const auto [transformed, cache] = phm::phm_forward(sample.image, pc);
    phm::ClassifierCache ccache;
    const auto logits = phm::classifier_forward(
        phm::resize_bilinear(transformed, phm::kClassifierInput,
                             phm::kClassifierInput),
        model, &ccache);
    const auto ce = phm::cross_entropy(logits, sample.label);
    const auto grads = phm::classifier_backward(ce.grad_logits, ccache, model);
    const auto grad_native = phm::resize_bilinear_backward(
        grads.input, 3, phm::kClassifierInput, phm::kClassifierInput,
        transformed.height, transformed.width);
    for (const double g : phm::phm_backward(grad_native, cache, pc)) {
      mass += std::abs(g);
    }
  }
  CHECK(mass > 0.0);
}

namespace {

// ReLU sign pattern and clip mask of the whole chain for one parameter
// vector. Every pre-activation is linear in any single phm parameter while
// these masks hold, so if the masks agree at both ends of a central
// difference window the loss is differentiable across it (up to the smooth
// cross entropy) and the estimate is trustworthy.
std::vector<std::uint8_t> chain_masks(const std::vector<LabeledSample>& batch,
                                      const phm::TinyClassifier& model,
                                      const phm::ParamContainer& pc) {
  std::vector<std::uint8_t> masks;
  for (const auto& sample : batch) {
    const auto [transformed, cache] = phm::phm_forward(sample.image, pc);
    masks.insert(masks.end(), cache.open.begin(), cache.open.end());
    phm::ClassifierCache cc;
    phm::classifier_forward(
        phm::resize_bilinear(transformed, phm::kClassifierInput,
                             phm::kClassifierInput),
        model, &cc);
    for (const double z : cc.z1) masks.push_back(z > 0.0);
    for (const double z : cc.z2) masks.push_back(z > 0.0);
  }
  return masks;
}

}  // namespace

TEST_CASE("composite loss gradient matches finite differences") {
  const auto data = phm::generate_shapes_dataset(4, 1, 55);
  const std::vector<LabeledSample> batch(data.begin(), data.end());

  // Interior parameters keep every pre-clip value away from the clip kinks.
  phm::ParamContainer pc = phm::init_linear_ramp(3, 512);
  for (double& v : pc.values) v = 0.02 + 0.96 * v;
  const auto model = phm::init_classifier(4, 78);

  // Assemble the analytic batch gradient.
  std::vector<double> analytic(pc.values.size(), 0.0);
  for (const auto& sample : batch) {
    const auto [transformed, cache] = phm::phm_forward(sample.image, pc);
    phm::ClassifierCache ccache;
    const auto logits = phm::classifier_forward(
        phm::resize_bilinear(transformed, phm::kClassifierInput,
                             phm::kClassifierInput),
        model, &ccache);
    const auto ce = phm::cross_entropy(logits, sample.label);
    const auto grads = phm::classifier_backward(ce.grad_logits, ccache, model);
    const auto grad_native = phm::resize_bilinear_backward(
        grads.input, 3, phm::kClassifierInput, phm::kClassifierInput,
        transformed.height, transformed.width);
    const auto gp = phm::phm_backward(grad_native, cache, pc);
    for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] += gp[i];
  }
  for (double& v : analytic) v /= static_cast<double>(batch.size());

  // Probe a fixed subset of parameters with central differences, verifying
  // per probe that no ReLU or clip boundary flips inside the window.
  phm::Rng rng(61);
  double worst = 0.0;
  int certified = 0;
  for (int probe = 0; probe < 8; ++probe) {
    const std::size_t i = rng.below(pc.values.size());
    const double saved = pc.values[i];
    pc.values[i] = saved + 1e-3;
    const double hi = composite_loss(batch, model, pc);
    const auto masks_hi = chain_masks(batch, model, pc);
    pc.values[i] = saved - 1e-3;
    const double lo = composite_loss(batch, model, pc);
    const auto masks_lo = chain_masks(batch, model, pc);
    pc.values[i] = saved;
    if (masks_hi != masks_lo) continue;  // estimate undefined across a kink
    ++certified;
    const double fd = (hi - lo) / 2e-3;
    const double diff = std::abs(analytic[i] - fd);
    worst = std::max(worst, std::abs(fd) < 1e-8 ? diff : diff / std::abs(fd));
  }
  INFO("certified probes: " << certified << ", worst rel err: " << worst);
  CHECK(certified >= 6);
  CHECK(worst < 1e-3);
}

TEST_CASE("identical configs give bit-identical training runs") {
  const auto data = phm::generate_shapes_dataset(4, 5, 71);
  TrainConfig config;
  config.epochs = 3;
  config.batch_size = 8;
  config.param_size = 32;
  config.seed = 9;

  const auto a = phm::train(data, config);
  const auto b = phm::train(data, config);
  CHECK(a.params.values == b.params.values);
  CHECK(a.model.conv1_weight == b.model.conv1_weight);
  CHECK(a.model.fc_bias == b.model.fc_bias);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].loss == b.metrics[i].loss);
    CHECK(a.metrics[i].train_acc == b.metrics[i].train_acc);
  }

  const std::string pa = phm::test::temp_path("metrics_a") + ".csv";
  const std::string pb = phm::test::temp_path("metrics_b") + ".csv";
  phm::write_metrics_csv(a.metrics, pa);
  phm::write_metrics_csv(b.metrics, pb);
  CHECK(slurp(pa) == slurp(pb));
}

TEST_CASE("learning-rate schedule applies the configured drops") {
  const auto data = phm::generate_shapes_dataset(2, 2, 81);
  TrainConfig config;
  config.epochs = 4;
  config.batch_size = 4;
  config.param_size = 8;
  config.lr_drops = {{2, 0.1}, {4, 0.1}};
  const auto result = phm::train(data, config);
  REQUIRE(result.metrics.size() == 4);
  CHECK(result.metrics[0].lr == Catch::Approx(0.05));
  CHECK(result.metrics[1].lr == Catch::Approx(0.005));
  CHECK(result.metrics[2].lr == Catch::Approx(0.005));
  CHECK(result.metrics[3].lr == Catch::Approx(0.0005));
}

TEST_CASE("evaluate scores argmax predictions") {
  // Bias-only model that always predicts class 0.
  phm::TinyClassifier m = phm::init_classifier(10, 3);
  for (auto* g : {&m.conv1_weight, &m.conv1_bias, &m.conv2_weight,
                  &m.conv2_bias, &m.fc_weight, &m.fc_bias}) {
    std::fill(g->begin(), g->end(), 0.0);
  }
  m.fc_bias[0] = 1.0;
  const auto pc = phm::init_linear_ramp(3, 8);

  std::vector<LabeledSample> all_zero;
  for (int i = 0; i < 6; ++i) {
    all_zero.push_back({ImageTensor(3, 8, 8, 0.1 * i + 0.05), 0});
  }
  CHECK(phm::evaluate(m, pc, all_zero, false) == 1.0);

  const auto balanced = phm::generate_shapes_dataset(10, 2, 91);
  CHECK(phm::evaluate(m, pc, balanced, false) == Catch::Approx(0.1));
  CHECK(phm::evaluate(m, pc, balanced, true) == Catch::Approx(0.1));

  CHECK_THROWS_AS(phm::evaluate(m, pc, {}, false), std::invalid_argument);
}

TEST_CASE("untrained random models score near chance on balanced data") {
  const auto balanced = phm::generate_shapes_dataset(10, 5, 101);
  const auto pc = phm::init_linear_ramp(3, 8);
  for (const std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto m = phm::init_classifier(10, seed);
    const double acc = phm::evaluate(m, pc, balanced, false);
    CHECK(acc >= 0.0);
    CHECK(acc <= 0.3);
  }
}

TEST_CASE("metrics csv has the documented layout") {
  const std::string path = phm::test::temp_path("metrics") + ".csv";
  phm::write_metrics_csv({{1, 2.5, 0.25, 0.05}, {2, 1.25, 0.5, 0.05}}, path);
  CHECK(slurp(path) == "epoch,loss,train_acc,lr\n1,2.5,0.25,0.05\n2,1.25,0.5,0.05\n");
}
