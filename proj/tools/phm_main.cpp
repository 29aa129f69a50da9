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

// Command-line front end: histogram tools, conventional and parametric
// histogram matching, training, evaluation, the parameter-size ablation
// harness, kernel benchmarks, and synthetic data generation.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "phm/classic_hist.hpp"
#include "phm/dataset.hpp"
#include "phm/image.hpp"
#include "phm/param_hm.hpp"
#include "phm/trainer.hpp"

namespace {

namespace fs = std::filesystem;

phm::DegradeSpec parse_degrade(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw CLI::ValidationError("--degrade",
                               "expected kind:severity, got '" + text + "'");
  }
  phm::DegradeSpec spec;
  try {
    spec.kind = phm::degrade_kind_from_string(text.substr(0, colon));
    spec.severity = std::stod(text.substr(colon + 1));
  } catch (const std::exception& e) {
    throw CLI::ValidationError("--degrade", e.what());
  }
  if (!(spec.severity >= 0.0 && spec.severity <= 1.0)) {
    throw CLI::ValidationError("--degrade", "severity must be in [0, 1]");
  }
  return spec;
}

std::pair<int, int> parse_image_size(const std::string& text) {
  int w = 0, h = 0;
  char sep = '\0';
  std::istringstream ss(text);
  if (!(ss >> w >> sep >> h) || (sep != 'x' && sep != 'X') || w < 1 || h < 1 ||
      ss.rdbuf()->in_avail() != 0) {
    throw CLI::ValidationError("--image", "expected WxH, got '" + text + "'");
  }
  return {w, h};
}

std::vector<phm::LabeledSample> resolve_dataset(const std::string& data,
                                                int classes, int per_class,
                                                std::uint64_t seed) {
  if (data == "synthetic") {
    return phm::generate_shapes_dataset(classes, per_class, seed);
  }
  return phm::load_dataset(data);
}

void write_histogram_csv(const phm::ImageTensor& image, std::ostream& out) {
  std::vector<phm::Histogram> hists;
  for (int c = 0; c < image.channels; ++c) {
    hists.push_back(phm::histogram(image.channel(c)));
  }
  out << "bin,r,g,b\n";
  for (int bin = 0; bin < phm::kBins; ++bin) {
    out << bin;
    for (const auto& h : hists) out << "," << h.counts[bin];
    out << "\n";
  }
}

struct EvalRow {
  int param_size;
  double clean;
  double lowlight, fog, sand, snow;
  double adverse_mean() const { return (lowlight + fog + sand + snow) / 4.0; }
};

EvalRow evaluate_suites(const phm::TinyClassifier& model,
                        const phm::ParamContainer& pc, bool phm_enabled,
                        const std::vector<phm::LabeledSample>& test,
                        double severity, std::uint64_t seed) {
  EvalRow row{pc.size, 0, 0, 0, 0, 0};
  row.clean = phm::evaluate(model, pc, test, phm_enabled);
  const phm::DegradeKind kinds[] = {
      phm::DegradeKind::kLowlight, phm::DegradeKind::kFog,
      phm::DegradeKind::kSand, phm::DegradeKind::kSnowNoise};
  double* slots[] = {&row.lowlight, &row.fog, &row.sand, &row.snow};
  for (int k = 0; k < 4; ++k) {
    const auto degraded = phm::degrade_dataset(test, {kinds[k], severity},
                                               phm::derive_seed(seed, 100 + k));
    *slots[k] = phm::evaluate(model, pc, degraded, phm_enabled);
  }
  return row;
}

void run_train(const std::string& data, const std::string& out_dir,
               const phm::TrainConfig& config, int classes, int per_class) {
  const auto samples =
      resolve_dataset(data, classes, per_class, config.seed);
  fs::create_directories(out_dir);

  const phm::TrainResult result = phm::train(samples, config);
  for (const auto& m : result.metrics) {
    std::printf("epoch %d loss=%.6f train_acc=%.4f lr=%g\n", m.epoch, m.loss,
                m.train_acc, m.lr);
  }
  phm::write_metrics_csv(result.metrics, (fs::path(out_dir) / "metrics.csv").string());
  phm::save_model(result.model, (fs::path(out_dir) / "model.tcn1").string());
  phm::save_params(result.params, (fs::path(out_dir) / "params.phm1").string());
  std::printf("wrote %s/{metrics.csv,model.tcn1,params.phm1}\n",
              out_dir.c_str());
}

void run_bench(const std::string& image_size, int iters, int param_size) {
  const auto [width, height] = parse_image_size(image_size);
  phm::Rng rng(42);
  phm::ImageTensor image(3, height, width);
  for (double& v : image.data) v = rng.uniform01();
  phm::ImageTensor target(3, height, width);
  for (double& v : target.data) v = rng.uniform01();
  const phm::ParamContainer pc = phm::init_linear_ramp(3, param_size);

  double sink = 0.0;
  const auto time_kernel = [&](const char* name, auto&& kernel) {
    using clock = std::chrono::steady_clock;
    kernel();  // warm up caches and allocators
    double total = 0.0, best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < iters; ++i) {
      const auto t0 = clock::now();
      kernel();
      const auto t1 = clock::now();
      const double ms =
          std::chrono::duration<double, std::milli>(t1 - t0).count();
      total += ms;
      best = std::min(best, ms);
    }
    std::printf("%s mean_ms=%.3f min_ms=%.3f\n", name, total / iters, best);
  };

  time_kernel("phm_forward", [&] {
    sink += phm::phm_forward(image, pc).first.data[0];
  });
  time_kernel("equalize", [&] { sink += phm::equalize(image).data[0]; });
  time_kernel("match", [&] {
    sink += phm::match_histogram(image, target).data[0];
  });
  if (!std::isfinite(sink)) std::fprintf(stderr, "non-finite benchmark output\n");
}

void run_ablate(const std::vector<int>& sizes, const std::string& data,
                const std::string& out_dir, phm::TrainConfig config,
                int classes, int per_class, double severity) {
  const auto all = resolve_dataset(data, classes, per_class, config.seed);
  const auto [train_set, test_set] = phm::split(all, 0.8, config.seed);
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "ablate.csv");
  if (!csv) throw std::runtime_error("ablate: cannot open " + out_dir + "/ablate.csv");

  const char* header = "s,clean,lowlight,fog,sand,snow_noise,adverse_mean";
  csv << header << "\n";
  std::printf("%s\n", header);
  for (const int s : sizes) {
    config.param_size = s;
    config.phm_enabled = true;
    const phm::TrainResult result = phm::train(train_set, config);
    const EvalRow row = evaluate_suites(result.model, result.params, true,
                                        test_set, severity, config.seed);
    char line[256];
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", s,
                  row.clean, row.lowlight, row.fog, row.sand, row.snow,
                  row.adverse_mean());
    csv << line << "\n";
    std::printf("%s\n", line);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable parametric histogram matching toolkit"};
  app.require_subcommand(1);

  // hist
  auto* hist_cmd = app.add_subcommand("hist", "Per-channel 256-bin histogram CSV");
  std::string hist_in, hist_csv;
  hist_cmd->add_option("input", hist_in, "input PPM")->required();
  hist_cmd->add_option("--csv", hist_csv, "write CSV here instead of stdout");
  hist_cmd->callback([&] {
    const auto image = phm::load_ppm(hist_in);
    if (hist_csv.empty()) {
      write_histogram_csv(image, std::cout);
    } else {
      std::ofstream out(hist_csv);
      if (!out) throw std::runtime_error("hist: cannot open " + hist_csv);
      write_histogram_csv(image, out);
    }
  });

  // equalize
  auto* eq_cmd = app.add_subcommand("equalize", "Histogram equalization");
  std::string eq_in, eq_out;
  eq_cmd->add_option("input", eq_in, "input PPM")->required();
  eq_cmd->add_option("output", eq_out, "output PPM")->required();
  eq_cmd->callback(
      [&] { phm::save_ppm(phm::equalize(phm::load_ppm(eq_in)), eq_out); });

  // match
  auto* match_cmd =
      app.add_subcommand("match", "Conventional histogram matching via LUT");
  std::string match_src, match_target, match_out;
  match_cmd->add_option("source", match_src, "source PPM")->required();
  match_cmd->add_option("target", match_target, "target PPM")->required();
  match_cmd->add_option("output", match_out, "output PPM")->required();
  match_cmd->callback([&] {
    phm::save_ppm(phm::match_histogram(phm::load_ppm(match_src),
                                       phm::load_ppm(match_target)),
                  match_out);
  });

  // phm-init
  auto* init_cmd =
      app.add_subcommand("phm-init", "Write a linear-ramp parameter container");
  int init_channels = 3, init_size = 2048;
  std::string init_out;
  init_cmd->add_option("--channels", init_channels, "channel count");
  init_cmd->add_option("--size", init_size, "parameters per channel");
  init_cmd->add_option("output", init_out, "output .phm1 file")->required();
  init_cmd->callback([&] {
    phm::save_params(phm::init_linear_ramp(init_channels, init_size), init_out);
  });

  // phm-apply
  auto* apply_cmd =
      app.add_subcommand("phm-apply", "Apply parametric histogram matching");
  std::string apply_params, apply_in, apply_out;
  apply_cmd->add_option("params", apply_params, "parameter .phm1 file")->required();
  apply_cmd->add_option("input", apply_in, "input PPM")->required();
  apply_cmd->add_option("output", apply_out, "output PPM")->required();
  apply_cmd->callback([&] {
    const auto pc = phm::load_params(apply_params);
    phm::save_ppm(phm::phm_forward(phm::load_ppm(apply_in), pc).first,
                  apply_out);
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train classifier + target distribution");
  std::string train_data = "synthetic", train_out_dir;
  phm::TrainConfig train_config;
  int train_classes = 10, train_per_class = 200;
  bool no_phm = false, no_augment = false;
  train_cmd->add_option("--data", train_data, "'synthetic' or a dataset directory");
  train_cmd->add_option("--epochs", train_config.epochs, "training epochs");
  train_cmd->add_option("--seed", train_config.seed, "RNG seed");
  train_cmd->add_option("--size", train_config.param_size, "parameters per channel");
  train_cmd->add_option("--batch", train_config.batch_size, "batch size");
  train_cmd->add_option("--classes", train_classes, "classes (synthetic data)");
  train_cmd->add_option("--per-class", train_per_class, "samples per class (synthetic data)");
  train_cmd->add_flag("--no-phm", no_phm, "train the plain classifier baseline");
  train_cmd->add_flag("--no-augment", no_augment, "disable horizontal flips");
  train_cmd->add_option("--out-dir", train_out_dir, "output directory")->required();
  train_cmd->callback([&] {
    train_config.phm_enabled = !no_phm;
    train_config.augment = !no_augment;
    run_train(train_data, train_out_dir, train_config, train_classes,
              train_per_class);
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string eval_model, eval_params, eval_data, eval_degrade, eval_csv = "eval.csv";
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--model", eval_model, "model .tcn1 file")->required();
  eval_cmd->add_option("--params", eval_params, "parameter .phm1 file (enables the preprocessor)");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--degrade", eval_degrade, "apply kind:severity to the dataset");
  eval_cmd->add_option("--seed", eval_seed, "degradation noise seed");
  eval_cmd->add_option("--csv", eval_csv, "evaluation CSV path");
  eval_cmd->callback([&] {
    const phm::TinyClassifier model = phm::load_model(eval_model);
    const bool phm_enabled = !eval_params.empty();
    const phm::ParamContainer pc =
        phm_enabled ? phm::load_params(eval_params)
                    : phm::init_linear_ramp(3, 2);
    auto samples = phm::load_dataset(eval_data);
    std::string degrade_name = "none";
    if (!eval_degrade.empty()) {
      const phm::DegradeSpec spec = parse_degrade(eval_degrade);
      samples = phm::degrade_dataset(samples, spec, eval_seed);
      degrade_name = eval_degrade;
    }
    const double top1 = phm::evaluate(model, pc, samples, phm_enabled);
    std::printf("top1=%.6f\n", top1);
    std::ofstream out(eval_csv);
    if (!out) throw std::runtime_error("eval: cannot open " + eval_csv);
    char line[512];
    std::snprintf(line, sizeof(line), "data,degrade,top1\n%s,%s,%.6f\n",
                  eval_data.c_str(), degrade_name.c_str(), top1);
    out << line;
  });

  // ablate
  auto* ablate_cmd =
      app.add_subcommand("ablate", "Train/eval once per parameter size");
  std::string ablate_sizes = "256,512,1024,2048,4096";
  std::string ablate_data = "synthetic", ablate_out_dir;
  phm::TrainConfig ablate_config;
  int ablate_classes = 10, ablate_per_class = 50;
  double ablate_severity = 0.7;
  ablate_cmd->add_option("--sizes", ablate_sizes, "comma-separated parameter sizes");
  ablate_cmd->add_option("--data", ablate_data, "'synthetic' or a dataset directory");
  ablate_cmd->add_option("--epochs", ablate_config.epochs, "training epochs");
  ablate_cmd->add_option("--seed", ablate_config.seed, "RNG seed");
  ablate_cmd->add_option("--classes", ablate_classes, "classes (synthetic data)");
  ablate_cmd->add_option("--per-class", ablate_per_class, "samples per class (synthetic data)");
  ablate_cmd->add_option("--severity", ablate_severity, "degradation severity");
  ablate_cmd->add_option("--out-dir", ablate_out_dir, "output directory")->required();
  ablate_cmd->callback([&] {
    std::vector<int> sizes;
    std::stringstream ss(ablate_sizes);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        sizes.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw CLI::ValidationError("--sizes", "bad size '" + item + "'");
      }
    }
    if (sizes.empty()) throw CLI::ValidationError("--sizes", "no sizes given");
    run_ablate(sizes, ablate_data, ablate_out_dir, ablate_config,
               ablate_classes, ablate_per_class, ablate_severity);
  });

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Time the forward kernels");
  std::string bench_image = "224x224";
  int bench_iters = 10, bench_size = 2048;
  bench_cmd->add_option("--image", bench_image, "image size WxH");
  bench_cmd->add_option("--iters", bench_iters, "timed iterations")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_option("--size", bench_size, "parameters per channel");
  bench_cmd->callback([&] { run_bench(bench_image, bench_iters, bench_size); });

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out;
  int gen_per_class = 100, gen_classes = 10;
  std::uint64_t gen_seed = 0;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--per-class", gen_per_class, "samples per class");
  gen_cmd->add_option("--classes", gen_classes, "class count");
  gen_cmd->add_option("--seed", gen_seed, "RNG seed");
  gen_cmd->callback([&] {
    const auto samples =
        phm::generate_shapes_dataset(gen_classes, gen_per_class, gen_seed);
    phm::export_dataset(samples, gen_out);
    std::printf("wrote %zu samples to %s\n", samples.size(), gen_out.c_str());
  });

  // degrade
  auto* deg_cmd = app.add_subcommand("degrade", "Degrade a dataset directory");
  std::string deg_in, deg_out, deg_kind = "fog";
  double deg_severity = 0.6;
  std::uint64_t deg_seed = 0;
  deg_cmd->add_option("--in", deg_in, "input dataset directory")->required();
  deg_cmd->add_option("--out", deg_out, "output dataset directory")->required();
  deg_cmd->add_option("--kind", deg_kind, "lowlight|fog|sand|snow-noise");
  deg_cmd->add_option("--severity", deg_severity, "severity in [0, 1]");
  deg_cmd->add_option("--seed", deg_seed, "noise seed");
  deg_cmd->callback([&] {
    const phm::DegradeSpec spec =
        parse_degrade(deg_kind + ":" + std::to_string(deg_severity));
    const auto samples = phm::load_dataset(deg_in);
    phm::export_dataset(phm::degrade_dataset(samples, spec, deg_seed), deg_out);
    std::printf("wrote %zu degraded samples to %s\n", samples.size(),
                deg_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
