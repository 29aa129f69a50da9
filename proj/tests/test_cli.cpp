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

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include "phm/classic_hist.hpp"
#include "phm/classifier.hpp"
#include "phm/image.hpp"
#include "test_util.hpp"

namespace {

struct CliResult {
  int exit_code;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args) {
  const std::string out_path = phm::test::temp_path("cli_out");
  const std::string err_path = phm::test::temp_path("cli_err");
  const std::string cmd = std::string(PHM_CLI_PATH) + " " + args + " > " +
                          out_path + " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  const auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string{std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>()};
  };
  const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return {code, slurp(out_path), slurp(err_path)};
}

std::string slurp_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string{std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>()};
}

// 16x16 image whose channels each hold every 8-bit value exactly once; all
// pixel values are distinct within a channel even after PPM quantization.
phm::ImageTensor shuffled_full_range_image(std::uint64_t seed) {
  phm::Rng rng(seed);
  phm::ImageTensor img(3, 16, 16);
  std::vector<int> values(256);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 256; ++i) values[i] = i;
    rng.shuffle(values);
    auto plane = img.channel(c);
    for (int i = 0; i < 256; ++i) plane[i] = values[i] / 255.0;
  }
  return img;
}

}  // namespace

TEST_CASE("cli reports usage errors with exit code 1") {
  CHECK(run_cli("no-such-subcommand").exit_code == 1);
  CHECK(run_cli("equalize --bogus-flag a b").exit_code == 1);
  CHECK(run_cli("").exit_code == 1);  // a subcommand is required
}

TEST_CASE("cli reports runtime errors with exit code 2") {
  const auto missing = run_cli("equalize /nonexistent/in.ppm /tmp/out.ppm");
  CHECK(missing.exit_code == 2);
  CHECK(missing.err.find("/nonexistent/in.ppm") != std::string::npos);

  const std::string empty_dir = phm::test::temp_path("cli_empty");
  std::filesystem::create_directories(empty_dir);
  const std::string model = phm::test::temp_path("cli_model") + ".tcn1";
  phm::save_model(phm::init_classifier(4, 0), model);
  const auto eval = run_cli("eval --model " + model + " --data " + empty_dir);
  CHECK(eval.exit_code == 2);
  CHECK(eval.err.find(empty_dir) != std::string::npos);
}

TEST_CASE("phm-init writes the documented header and ramp") {
  const std::string path = phm::test::temp_path("cli_params") + ".phm1";
  REQUIRE(run_cli("phm-init --channels 2 --size 3 " + path).exit_code == 0);
  CHECK(slurp_file(path) == "PHM1 2 3\n0\n0.5\n1\n0\n0.5\n1\n");

  CHECK(run_cli("phm-init --channels 3 --size 1 " + path).exit_code == 2);
}

TEST_CASE("phm-apply with the ramp matches equalize on distinct pixels") {
  const std::string in = phm::test::temp_path("cli_in") + ".ppm";
  const std::string params = phm::test::temp_path("cli_ramp") + ".phm1";
  const std::string phm_out = phm::test::temp_path("cli_phm") + ".ppm";
  const std::string he_out = phm::test::temp_path("cli_he") + ".ppm";

  phm::save_ppm(shuffled_full_range_image(5), in);
  REQUIRE(run_cli("phm-init --channels 3 --size 2048 " + params).exit_code == 0);
  REQUIRE(run_cli("phm-apply " + params + " " + in + " " + phm_out).exit_code == 0);
  REQUIRE(run_cli("equalize " + in + " " + he_out).exit_code == 0);

  const phm::ImageTensor a = phm::load_ppm(phm_out);
  const phm::ImageTensor b = phm::load_ppm(he_out);
  REQUIRE(a.same_shape(b));
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(std::abs(a.data[i] - b.data[i]) <= 2.0 / 255.0);
  }
}

TEST_CASE("hist emits one csv row per bin") {
  const std::string in = phm::test::temp_path("cli_hist_in") + ".ppm";
  phm::save_ppm(shuffled_full_range_image(7), in);

  const auto to_stdout = run_cli("hist " + in);
  REQUIRE(to_stdout.exit_code == 0);
  CHECK(to_stdout.out.substr(0, 10) == "bin,r,g,b\n");
  CHECK(std::count(to_stdout.out.begin(), to_stdout.out.end(), '\n') == 257);

  const std::string csv = phm::test::temp_path("cli_hist") + ".csv";
  REQUIRE(run_cli("hist " + in + " --csv " + csv).exit_code == 0);
  CHECK(slurp_file(csv) == to_stdout.out);
  // Every value appears exactly once per channel.
  std::istringstream rows(slurp_file(csv));
  std::string line;
  std::getline(rows, line);
  while (std::getline(rows, line)) {
    CHECK(line.substr(line.find(',')) == ",1,1,1");
  }
}

TEST_CASE("match maps a flat image onto a target distribution") {
  const std::string src = phm::test::temp_path("cli_src") + ".ppm";
  const std::string target = phm::test::temp_path("cli_target") + ".ppm";
  const std::string out = phm::test::temp_path("cli_matched") + ".ppm";

  phm::save_ppm(phm::ImageTensor(3, 4, 4, 0.2), src);
  phm::save_ppm(phm::ImageTensor(3, 4, 4, 0.9), target);
  REQUIRE(run_cli("match " + src + " " + target + " " + out).exit_code == 0);
  const phm::ImageTensor matched = phm::load_ppm(out);
  for (const double v : matched.data) {
    CHECK(v == Catch::Approx(0.9).margin(1.0 / 255.0));
  }
}

TEST_CASE("bench prints mean and min timings for the three kernels") {
  const auto r = run_cli("bench --image 48x32 --iters 2");
  REQUIRE(r.exit_code == 0);
  for (const std::string kernel : {"phm_forward", "equalize", "match"}) {
    const auto pos = r.out.find(kernel + " mean_ms=");
    CHECK(pos != std::string::npos);
    CHECK(r.out.find("min_ms=", pos) != std::string::npos);
  }
}

TEST_CASE("gen-data / degrade / eval pipeline runs end to end") {
  const std::string data_dir = phm::test::temp_path("cli_data");
  const std::string fog_dir = phm::test::temp_path("cli_fog");
  const std::string train_dir = phm::test::temp_path("cli_train");

  REQUIRE(run_cli("gen-data --out " + data_dir +
                  " --per-class 3 --classes 4 --seed 3").exit_code == 0);
  REQUIRE(run_cli("degrade --in " + data_dir + " --out " + fog_dir +
                  " --kind fog --severity 0.5").exit_code == 0);
  CHECK(std::filesystem::exists(std::filesystem::path(fog_dir) / "0"));

  REQUIRE(run_cli("train --data " + data_dir + " --epochs 1 --seed 1 " +
                  "--size 16 --batch 6 --out-dir " + train_dir).exit_code == 0);
  REQUIRE(std::filesystem::exists(std::filesystem::path(train_dir) / "metrics.csv"));

  const std::string eval_csv = phm::test::temp_path("cli_eval") + ".csv";
  const auto eval = run_cli("eval --model " + train_dir + "/model.tcn1" +
                            " --params " + train_dir + "/params.phm1" +
                            " --data " + fog_dir + " --csv " + eval_csv);
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.out.find("top1=") != std::string::npos);
  CHECK(slurp_file(eval_csv).find("data,degrade,top1") != std::string::npos);

  const auto degraded_eval =
      run_cli("eval --model " + train_dir + "/model.tcn1 --data " + data_dir +
              " --degrade lowlight:0.5 --csv " + eval_csv);
  REQUIRE(degraded_eval.exit_code == 0);

  const auto bad_degrade =
      run_cli("eval --model " + train_dir + "/model.tcn1 --data " + data_dir +
              " --degrade rain:0.5 --csv " + eval_csv);
  CHECK(bad_degrade.exit_code == 1);
}
