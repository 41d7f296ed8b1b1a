// Copyright 2026 The qbnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <set>

#include "qbnn/sweep.hpp"

using namespace qbnn;

namespace {

ExperimentConfig smoke_config() {
  return ExperimentConfig::from_string(R"(
task = regression
dataset = synthetic
name = smoke

[data]
synth_train = 64
synth_val = 0
synth_test = 64

[model]
hidden = 8,8

[train]
epochs = 6
lr = 0.02

[qat]
epochs = 1

[eval]
samples = 5

[sweep]
seeds = 1
methods = pointwise,mcd
bits_w = 8
bits_a = 7
modes = float,simulated,integer
)");
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("csv formatting") {
  REQUIRE(format_value(1.0 / 3.0) == "0.333333333");
  REQUIRE(format_value(2.0) == "2");
  SECTION("empty row set yields a header-only file") {
    const std::string path = temp_path("qbnn_empty.csv");
    emit_csv({}, path);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    REQUIRE(line == kCsvHeader);
    REQUIRE(!std::getline(in, line));
    std::remove(path.c_str());
  }
}

TEST_CASE("sweep emits a full grid of rows deterministically") {
  ExperimentConfig cfg = smoke_config();
  std::vector<ResultRow> rows = run_sweep(cfg);

  // Two methods x three modes x (rmse, nll on test; rmse on test_clean).
  REQUIRE(rows.size() == 2 * 3 * 3);
  std::set<std::string> seen;
  for (const auto& r : rows) {
    seen.insert(r.method + "/" + r.mode + "/" + r.split + "/" + r.metric);
    REQUIRE(r.dataset == "smoke");
    REQUIRE(r.bits_w == 8);
    REQUIRE(r.bits_a == 7);
    REQUIRE(std::isfinite(r.value));
  }
  REQUIRE(seen.count("pointwise/float/test/rmse") == 1);
  REQUIRE(seen.count("mcd/integer/test/nll") == 1);
  REQUIRE(seen.count("mcd/simulated/test_clean/rmse") == 1);

  SECTION("second run is byte-identical") {
    std::vector<ResultRow> again = run_sweep(cfg);
    REQUIRE(to_csv(rows) == to_csv(again));
  }
}

TEST_CASE("csv roundtrip recovers rows exactly") {
  ExperimentConfig cfg = smoke_config();
  cfg.sweep_methods = {MethodKind::Pointwise};
  std::vector<ResultRow> rows = run_sweep(cfg);
  const std::string path = temp_path("qbnn_rows.csv");
  emit_csv(rows, path);
  std::vector<ResultRow> parsed = parse_csv(path);
  REQUIRE(to_csv(parsed) == to_csv(rows));
  std::remove(path.c_str());
}

TEST_CASE("overflow guard drives cell selection") {
  ExperimentConfig cfg = smoke_config();
  cfg.sweep_methods = {MethodKind::Pointwise};
  cfg.sweep_bits_w = {8};
  cfg.sweep_bits_a = {7};
  cfg.sweep_modes = {Mode::Simulated};
  SECTION("guard on: invalid cells are skipped") {
    cfg.sweep_bits_w = {4};
    cfg.sweep_bits_a = {7};
    std::vector<ResultRow> rows = run_sweep(cfg);
    REQUIRE(rows.empty());
  }
  SECTION("guard off: cells run with a warning") {
    cfg.sweep_bits_w = {4};
    cfg.sweep_bits_a = {5};
    cfg.qat.enforce_overflow_guard = false;
    std::vector<ResultRow> rows = run_sweep(cfg);
    REQUIRE(!rows.empty());
  }
}

TEST_CASE("plot data aggregates over seeds") {
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (int ba : {7, 3}) {
      ResultRow r;
      r.method = "mcd";
      r.mode = "simulated";
      r.bits_w = 8;
      r.bits_a = ba;
      r.seed = seed;
      r.dataset = "d";
      r.split = "test";
      r.metric = "rmse";
      r.value = ba == 7 ? 1.0 + 0.1 * static_cast<double>(seed)
                        : 2.0 + 0.1 * static_cast<double>(seed);
      rows.push_back(r);
    }
  }
  std::vector<PlotRow> plot = plot_data(rows, "bits_a", "rmse", "test");
  REQUIRE(plot.size() == 2);
  REQUIRE(plot[0].axis_value == 3);
  REQUIRE(plot[0].n == 3);
  REQUIRE(plot[0].mean == Catch::Approx(2.2));
  REQUIRE(plot[1].axis_value == 7);
  REQUIRE(plot[1].mean == Catch::Approx(1.2));
  REQUIRE(plot[1].stddev == Catch::Approx(0.1));
  SECTION("bad axis rejected") {
    REQUIRE_THROWS_AS(plot_data(rows, "bits_q", "rmse", "test"),
                      std::invalid_argument);
  }
}
