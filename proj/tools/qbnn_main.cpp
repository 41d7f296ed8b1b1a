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

#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "qbnn/qbnn.hpp"

namespace {

using namespace qbnn;

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<int> bits_w, bits_a;
  std::string log_path;
};

// Line-delimited epoch records, one JSON object per line.
struct LogFile {
  std::ofstream out;
  EpochLogger logger;

  explicit LogFile(const std::string& path) {
    if (path.empty()) return;
    out.open(path);
    if (!out) throw std::runtime_error("cannot open log file " + path);
    logger = [this](const EpochLog& log) {
      out << format_epoch_log(log) << "\n";
    };
  }
};

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig cfg = ExperimentConfig::from_file(opts.config_path);
  if (opts.method) cfg.method = method_kind_from_string(*opts.method);
  if (opts.bits_w) cfg.qat.bits_w = *opts.bits_w;
  if (opts.bits_a) cfg.qat.bits_a = *opts.bits_a;
  return cfg;
}

std::uint64_t pick_seed(const ExperimentConfig& cfg, const CommonOpts& opts) {
  if (opts.seed) return *opts.seed;
  if (!cfg.seeds.empty()) return cfg.seeds.front();
  return 1;
}

Checkpoint to_checkpoint(TrainedModel&& tm) {
  Checkpoint ckpt;
  ckpt.is_ensemble = tm.is_ensemble;
  if (tm.is_ensemble) {
    ckpt.ensemble = std::move(tm.ensemble);
  } else {
    ckpt.model = std::move(tm.model);
  }
  return ckpt;
}

TrainedModel to_trained(Checkpoint&& ckpt) {
  TrainedModel tm;
  tm.is_ensemble = ckpt.is_ensemble;
  if (ckpt.is_ensemble) {
    tm.ensemble = std::move(ckpt.ensemble);
  } else {
    tm.model = std::move(ckpt.model);
  }
  return tm;
}

int cmd_train(const CommonOpts& opts, const std::string& out_path) {
  ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = pick_seed(cfg, opts);
  SweepData data = build_sweep_data(cfg, seed);
  LogFile log(opts.log_path);
  TrainedModel tm = train_float_model(cfg, cfg.method, seed, data, log.logger);
  save_checkpoint(to_checkpoint(std::move(tm)), out_path);
  std::cout << "trained " << to_string(cfg.method) << " model (seed " << seed
            << ") -> " << out_path << "\n";
  return 0;
}

int cmd_qat(const CommonOpts& opts, const std::string& model_path,
            const std::string& out_path) {
  ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = pick_seed(cfg, opts);
  SweepData data = build_sweep_data(cfg, seed);
  TrainedModel tm = to_trained(load_checkpoint(model_path));
  LogFile log(opts.log_path);
  TrainedModel quantised = quantise_trained(tm, cfg, cfg.qat.bits_w,
                                            cfg.qat.bits_a, seed, data,
                                            log.logger);
  save_checkpoint(to_checkpoint(std::move(quantised)), out_path);
  std::cout << "fine-tuned at " << cfg.qat.bits_w << "-bit weights / "
            << cfg.qat.bits_a << "-bit activations -> " << out_path << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& model_path,
             const std::string& mode_name, const std::string& out_path) {
  ExperimentConfig cfg = load_config(opts);
  const std::uint64_t seed = pick_seed(cfg, opts);
  const Mode mode = mode_from_string(mode_name);
  SweepData data = build_sweep_data(cfg, seed);
  TrainedModel tm = to_trained(load_checkpoint(model_path));

  const bool finalised =
      tm.is_ensemble
          ? (!tm.ensemble.members.empty() && tm.ensemble.members[0].finalised)
          : tm.model.finalised;
  if (mode != Mode::Float && !finalised) {
    std::cerr << "eval: model is not quantised; run the qat subcommand first\n";
    return 1;
  }
  ResultRow base;
  if (tm.is_ensemble) {
    base.method = "sghmc";
  } else if (tm.model.method == Method::Pointwise) {
    base.method = "pointwise";
  } else if (tm.model.method == Method::Mcd) {
    base.method = "mcd";
  } else {
    base.method = "bbb";
  }
  const Mlp& head = tm.is_ensemble ? tm.ensemble.members[0] : tm.model;
  base.bits_w = finalised ? head.bits_w : 32;
  base.bits_a = finalised ? head.bits_a : 32;
  base.seed = seed;
  base.dataset = cfg.dataset_name;
  base.mode = to_string(mode);

  std::vector<ResultRow> rows;
  auto emit = [&](const std::string& split, const std::string& metric,
                  double value) {
    ResultRow row = base;
    row.split = split;
    row.metric = metric;
    row.value = value;
    rows.push_back(std::move(row));
  };
  SeededRng eval_rng = SeededRng(seed).child(0xeu);
  if (data.task == Task::Regression) {
    eval_regression_rows(tm, data.reg, cfg, mode, eval_rng, emit);
  } else {
    eval_classification_rows(tm, data.cls, cfg, mode, eval_rng, emit);
  }
  emit_csv(rows, out_path);
  std::cout << "wrote " << rows.size() << " rows -> " << out_path << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& out_path) {
  ExperimentConfig cfg = load_config(opts);
  if (opts.seed) cfg.seeds = {*opts.seed};
  if (opts.method) cfg.sweep_methods = {cfg.method};
  if (opts.bits_w) cfg.sweep_bits_w = {*opts.bits_w};
  if (opts.bits_a) cfg.sweep_bits_a = {*opts.bits_a};
  std::vector<ResultRow> rows = run_sweep(cfg);
  emit_csv(rows, out_path);
  std::cout << "wrote " << rows.size() << " rows -> " << out_path << "\n";
  return 0;
}

int cmd_plot_data(const std::string& in_path, const std::string& axis,
                  const std::string& metric, const std::string& split,
                  const std::string& out_path) {
  std::vector<ResultRow> rows = parse_csv(in_path);
  std::vector<PlotRow> plot = plot_data(rows, axis, metric, split);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("plot-data: cannot write " + out_path);
  out << plot_rows_to_csv(plot, axis);
  std::cout << "wrote " << plot.size() << " aggregated rows -> " << out_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantised Bayesian neural networks: train, fine-tune with "
               "simulated quantisation, run bit-exact integer inference, and "
               "sweep bit widths."};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out_path, model_path, mode_name = "float";
  std::string plot_in, plot_axis = "bits_a", plot_metric = "rmse",
              plot_split = "test";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path,
                    "experiment configuration file")
        ->required();
    sub->add_option("--seed", opts.seed, "override the experiment seed");
    sub->add_option("--method", opts.method,
                    "override the method (pointwise|mcd|bbb|sghmc)");
    sub->add_option("--bits-w", opts.bits_w, "override weight bit width");
    sub->add_option("--bits-a", opts.bits_a, "override activation bit width");
    sub->add_option("--log", opts.log_path,
                    "write per-epoch training records (one JSON line each)");
  };

  CLI::App* train = app.add_subcommand("train", "train a float model");
  add_common(train);
  train->add_option("--out", out_path, "output checkpoint path")->required();

  CLI::App* qat = app.add_subcommand(
      "qat", "quantisation-aware fine-tuning of a trained checkpoint");
  add_common(qat);
  qat->add_option("--model", model_path, "input checkpoint")->required();
  qat->add_option("--out", out_path, "output checkpoint path")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval);
  eval->add_option("--model", model_path, "input checkpoint")->required();
  eval->add_option("--mode", mode_name, "float | simulated | integer");
  eval->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* sweep =
      app.add_subcommand("sweep", "bit-width sweep over methods and seeds");
  add_common(sweep);
  sweep->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* plot = app.add_subcommand(
      "plot-data", "aggregate a sweep CSV into figure-ready tables");
  plot->add_option("--in", plot_in, "sweep CSV")->required();
  plot->add_option("--axis", plot_axis, "bits_a | bits_w");
  plot->add_option("--metric", plot_metric, "metric name to aggregate");
  plot->add_option("--split", plot_split, "split to aggregate");
  plot->add_option("--out", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train)) return cmd_train(opts, out_path);
    if (app.got_subcommand(qat)) return cmd_qat(opts, model_path, out_path);
    if (app.got_subcommand(eval))
      return cmd_eval(opts, model_path, mode_name, out_path);
    if (app.got_subcommand(sweep)) return cmd_sweep(opts, out_path);
    if (app.got_subcommand(plot))
      return cmd_plot_data(plot_in, plot_axis, plot_metric, plot_split,
                           out_path);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
