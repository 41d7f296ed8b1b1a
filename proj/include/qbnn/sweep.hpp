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

#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <tuple>
#include <string>
#include <vector>

#include "qbnn/checkpoint.hpp"
#include "qbnn/config.hpp"
#include "qbnn/data.hpp"
#include "qbnn/metrics.hpp"
#include "qbnn/model.hpp"
#include "qbnn/train.hpp"

namespace qbnn {

struct ResultRow {
  std::string method;
  std::string mode;
  int bits_w = 0;
  int bits_a = 0;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string split;
  std::string metric;
  double value = 0.0;
};

constexpr const char* kCsvHeader =
    "method,mode,bits_w,bits_a,seed,dataset,split,metric,value";

/// Deterministic float formatting: nine significant digits.
inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += r.method;
    out += ',';
    out += r.mode;
    out += ',';
    out += std::to_string(r.bits_w);
    out += ',';
    out += std::to_string(r.bits_a);
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += r.dataset;
    out += ',';
    out += r.split;
    out += ',';
    out += r.metric;
    out += ',';
    out += format_value(r.value);
    out += '\n';
  }
  return out;
}

inline void emit_csv(const std::vector<ResultRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_csv: cannot write " + path);
  out << to_csv(rows);
}

inline std::vector<ResultRow> parse_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("parse_csv: bad header in " + path);
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw std::runtime_error("parse_csv: bad row: " + line);
    ResultRow r;
    r.method = cells[0];
    r.mode = cells[1];
    r.bits_w = std::stoi(cells[2]);
    r.bits_a = std::stoi(cells[3]);
    r.seed = std::stoull(cells[4]);
    r.dataset = cells[5];
    r.split = cells[6];
    r.metric = cells[7];
    r.value = std::stod(cells[8]);
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Data and model construction from a config.
// ---------------------------------------------------------------------------

struct SweepData {
  Task task = Task::Regression;
  RegressionDataset reg;
  ClassificationDataset cls;
};

inline SweepData build_sweep_data(const ExperimentConfig& cfg,
                                  std::uint64_t seed) {
  SweepData data;
  data.task = cfg.task;
  const std::uint64_t mix = seed * 1000003ull + cfg.data_seed;
  switch (cfg.dataset) {
    case DatasetSource::Synthetic: {
      if (cfg.task != Task::Regression) {
        throw std::invalid_argument("synthetic dataset is regression-only");
      }
      SeededRng rng(mix);
      data.reg = synth_regression(rng, cfg.synth_train, cfg.synth_val,
                                  cfg.synth_test);
      break;
    }
    case DatasetSource::Csv: {
      if (cfg.task != Task::Regression) {
        throw std::invalid_argument("csv dataset is regression-only");
      }
      SplitFractions f;
      f.train = cfg.train_fraction;
      f.val = cfg.val_fraction;
      f.test = 1.0 - f.train - f.val;
      data.reg = load_csv_regression(cfg.csv_path, f, mix);
      break;
    }
    case DatasetSource::Idx: {
      if (cfg.task != Task::Classification) {
        throw std::invalid_argument("idx dataset is classification-only");
      }
      ImageSet set = load_idx_images(cfg.idx_images, cfg.idx_labels);
      data.cls = split_images(set, cfg.image_train, mix);
      break;
    }
  }
  return data;
}

/// A trained float-phase model: either a single network or an SGHMC ensemble.
struct TrainedModel {
  bool is_ensemble = false;
  Mlp model;
  SghmcEnsemble ensemble;
};

inline std::vector<std::size_t> layer_dims(const ExperimentConfig& cfg,
                                           const SweepData& data) {
  std::vector<std::size_t> dims;
  dims.push_back(data.task == Task::Regression
                     ? data.reg.x_train.cols()
                     : data.cls.x_train.cols());
  for (auto h : cfg.hidden) dims.push_back(h);
  dims.push_back(data.task == Task::Regression ? 1 : data.cls.num_classes);
  return dims;
}

inline std::uint64_t method_salt(MethodKind m) {
  return 0x5151ull + static_cast<std::uint64_t>(m);
}

/// Main training phase for one (method, seed) pair.
inline TrainedModel train_float_model(const ExperimentConfig& cfg,
                                      MethodKind method, std::uint64_t seed,
                                      const SweepData& data,
                                      const EpochLogger& logger = {}) {
  SeededRng rng = SeededRng(seed).child(method_salt(method));
  const std::vector<std::size_t> dims = layer_dims(cfg, data);
  const Tensor& x = data.task == Task::Regression ? data.reg.x_train
                                                  : data.cls.x_train;
  const Tensor& y = data.task == Task::Regression ? data.reg.y_train
                                                  : data.cls.y_train;
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.momentum = cfg.momentum;
  tc.kl_weight = cfg.kl_weight;
  tc.prior_sigma = cfg.prior_sigma;
  tc.logger = logger;

  TrainedModel out;
  switch (method) {
    case MethodKind::Pointwise: {
      out.model = make_mlp<float>(data.task, Method::Pointwise, dims, rng);
      fit(out.model, x, y, tc, rng);
      break;
    }
    case MethodKind::Mcd: {
      out.model = make_mlp<float>(data.task, Method::Mcd, dims, rng,
                                  cfg.dropout_p);
      fit(out.model, x, y, tc, rng);
      break;
    }
    case MethodKind::Bbb: {
      out.model = make_mlp<float>(data.task, Method::Bbb, dims, rng);
      fit(out.model, x, y, tc, rng);
      break;
    }
    case MethodKind::Sghmc: {
      out.is_ensemble = true;
      Mlp base = make_mlp<float>(data.task, Method::Pointwise, dims, rng);
      TrainConfig pre = tc;
      pre.epochs = cfg.sghmc_pretrain_epochs;
      fit(base, x, y, pre, rng);
      SghmcTrainConfig sc;
      sc.eta = cfg.sghmc_eta;
      sc.friction = cfg.sghmc_friction;
      sc.batch_size = cfg.batch_size;
      sc.burnin_steps = cfg.sghmc_burnin_steps;
      sc.thinning = cfg.sghmc_thinning;
      sc.num_samples = cfg.sghmc_samples;
      sc.prior_sigma = cfg.prior_sigma;
      out.ensemble = collect_sghmc_samples(base, x, y, sc, rng);
      break;
    }
  }
  return out;
}

/// Copies the float model and fine-tunes the copy at the given widths.
inline TrainedModel quantise_trained(const TrainedModel& trained,
                                     const ExperimentConfig& cfg, int bits_w,
                                     int bits_a, std::uint64_t seed,
                                     const SweepData& data,
                                     const EpochLogger& logger = {}) {
  QatConfig qc = cfg.qat;
  qc.bits_w = bits_w;
  qc.bits_a = bits_a;
  qc.base_lr = cfg.lr;
  qc.batch_size = cfg.batch_size;
  qc.momentum = cfg.momentum;
  qc.logger = logger;
  const Tensor& x = data.task == Task::Regression ? data.reg.x_train
                                                  : data.cls.x_train;
  const Tensor& y = data.task == Task::Regression ? data.reg.y_train
                                                  : data.cls.y_train;
  TrainedModel out = trained;
  SeededRng rng = SeededRng(seed).child(0x9a7ull + static_cast<std::uint64_t>(bits_w) * 16 + static_cast<std::uint64_t>(bits_a));
  if (out.is_ensemble) {
    qat_finetune(out.ensemble, x, y, qc, rng);
  } else {
    qat_finetune(out.model, x, y, qc, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

inline PredictiveSummary summarise_model(TrainedModel& tm, const Tensor& x,
                                         std::size_t L, SeededRng& rng,
                                         Mode mode) {
  if (tm.is_ensemble) return predictive(tm.ensemble, x, mode);
  return predictive(tm.model, x, L, rng, mode);
}

inline void eval_regression_rows(
    TrainedModel& tm, const RegressionDataset& ds, const ExperimentConfig& cfg,
    Mode mode, SeededRng& rng,
    const std::function<void(const std::string&, const std::string&, double)>&
        emit) {
  PredictiveSummary s =
      summarise_model(tm, ds.x_test, cfg.mc_samples, rng, mode);
  Tensor mean = unstandardise_mean(s.mean, ds.y_mean, ds.y_std);
  Tensor var = unstandardise_variance(s.variance, ds.y_std);
  // Predictive variance for the likelihood: MC variance plus observation
  // noise.
  Tensor nll_var = var;
  for (auto& v : nll_var.data())
    v += static_cast<float>(cfg.sigma_obs * cfg.sigma_obs);
  emit("test", "rmse", rmse(mean, ds.y_test));
  emit("test", "nll", nll_regression(mean, nll_var, ds.y_test));
  if (!ds.y_test_clean.empty()) {
    emit("test_clean", "rmse", rmse(mean, ds.y_test_clean));
  }
}

inline void eval_classification_rows(
    TrainedModel& tm, const ClassificationDataset& ds,
    const ExperimentConfig& cfg, Mode mode, SeededRng& rng,
    const std::function<void(const std::string&, const std::string&, double)>&
        emit) {
  PredictiveSummary s =
      summarise_model(tm, ds.x_test, cfg.mc_samples, rng, mode);
  Tensor one_hot({ds.labels_test.size(), ds.num_classes});
  for (std::size_t i = 0; i < ds.labels_test.size(); ++i)
    one_hot(i, ds.labels_test[i]) = 1.0f;
  emit("test", "error", classification_error(s.mean, ds.labels_test));
  emit("test", "nll", nll_classification(s.mean, one_hot));
  emit("test", "ape", avg_predictive_entropy(s.mean));
  emit("test", "ece", ece(s.mean, ds.labels_test, cfg.ece_bins));
  if (!cfg.confusion.empty()) {
    Tensor shifted = ds.x_test;
    for (const auto& spec : cfg.confusion) {
      shifted = augment(shifted, ds.height, ds.width, spec.kind, spec.strength);
    }
    PredictiveSummary c = summarise_model(tm, shifted, cfg.mc_samples, rng, mode);
    emit("confusion", "error", classification_error(c.mean, ds.labels_test));
    emit("confusion", "ape", avg_predictive_entropy(c.mean));
    emit("confusion", "ece", ece(c.mean, ds.labels_test, cfg.ece_bins));
  }
}

// ---------------------------------------------------------------------------
// The sweep driver.
// ---------------------------------------------------------------------------

using RowSink = std::function<void(const ResultRow&)>;

/// Full grid: for each (seed, method, bits_w, bits_a), train float (cached
/// per seed and method), fine-tune a quantised copy, and evaluate the
/// configured modes. Rows stream to the sink as they are produced; cell
/// failures are recorded as failure rows and the sweep continues.
inline void run_sweep(const ExperimentConfig& cfg, const RowSink& sink) {
  for (const std::uint64_t seed : cfg.seeds) {
    SweepData data = build_sweep_data(cfg, seed);
    for (const MethodKind method : cfg.sweep_methods) {
      TrainedModel float_model = train_float_model(cfg, method, seed, data);
      for (const int bw : cfg.sweep_bits_w) {
        for (const int ba : cfg.sweep_bits_a) {
          if (ba > bw - 1) {
            if (cfg.qat.enforce_overflow_guard) {
              std::cerr << "sweep: skipping bits_w=" << bw << " bits_a=" << ba
                        << " (overflow guard requires bits_a <= bits_w - 1)\n";
              continue;
            }
            std::cerr << "sweep: WARNING: bits_a=" << ba << " > bits_w-1="
                      << (bw - 1)
                      << "; accumulators may overflow, results may saturate\n";
          }
          ResultRow base;
          base.method = to_string(method);
          base.bits_w = bw;
          base.bits_a = ba;
          base.seed = seed;
          base.dataset = cfg.dataset_name;
          try {
            TrainedModel quantised =
                quantise_trained(float_model, cfg, bw, ba, seed, data);
            for (const Mode mode : cfg.sweep_modes) {
              TrainedModel& which =
                  mode == Mode::Float ? float_model : quantised;
              // Float draws are independent of the bit widths so float rows
              // repeat identically across cells.
              const std::uint64_t eval_salt =
                  mode == Mode::Float
                      ? 0xe0ull
                      : 0xe1ull + ((static_cast<std::uint64_t>(bw) * 16 + ba)
                                   << 8) +
                            static_cast<std::uint64_t>(mode);
              SeededRng eval_rng =
                  SeededRng(seed).child(method_salt(method) ^ eval_salt);
              ResultRow row = base;
              row.mode = to_string(mode);
              auto emit = [&](const std::string& split,
                              const std::string& metric, double value) {
                row.split = split;
                row.metric = metric;
                row.value = value;
                sink(row);
              };
              if (data.task == Task::Regression) {
                eval_regression_rows(which, data.reg, cfg, mode, eval_rng, emit);
              } else {
                eval_classification_rows(which, data.cls, cfg, mode, eval_rng,
                                         emit);
              }
            }
          } catch (const std::exception& ex) {
            std::cerr << "sweep: cell failed (" << base.method << ", w=" << bw
                      << ", a=" << ba << ", seed=" << seed << "): " << ex.what()
                      << "\n";
            ResultRow row = base;
            row.mode = "-";
            row.split = "-";
            row.metric = "failure";
            row.value = 1.0;
            sink(row);
          }
        }
      }
    }
  }
}

inline std::vector<ResultRow> run_sweep(const ExperimentConfig& cfg) {
  std::vector<ResultRow> rows;
  run_sweep(cfg, [&rows](const ResultRow& r) { rows.push_back(r); });
  return rows;
}

// ---------------------------------------------------------------------------
// Figure-style aggregation: metric vs bit-width, grouped by method and mode,
// aggregated over seeds.
// ---------------------------------------------------------------------------

struct PlotRow {
  int axis_value = 0;
  std::string method;
  std::string mode;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

inline std::vector<PlotRow> plot_data(const std::vector<ResultRow>& rows,
                                      const std::string& axis,
                                      const std::string& metric,
                                      const std::string& split) {
  if (axis != "bits_a" && axis != "bits_w") {
    throw std::invalid_argument("plot_data: axis must be bits_a or bits_w");
  }
  std::map<std::tuple<int, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows) {
    if (r.metric != metric || r.split != split) continue;
    const int av = axis == "bits_a" ? r.bits_a : r.bits_w;
    groups[{av, r.method, r.mode}].push_back(r.value);
  }
  std::vector<PlotRow> out;
  for (const auto& [key, values] : groups) {
    PlotRow p;
    p.axis_value = std::get<0>(key);
    p.method = std::get<1>(key);
    p.mode = std::get<2>(key);
    p.n = values.size();
    for (double v : values) p.mean += v;
    p.mean /= static_cast<double>(values.size());
    for (double v : values) p.stddev += (v - p.mean) * (v - p.mean);
    p.stddev = values.size() > 1
                   ? std::sqrt(p.stddev / static_cast<double>(values.size() - 1))
                   : 0.0;
    out.push_back(std::move(p));
  }
  return out;
}

inline std::string plot_rows_to_csv(const std::vector<PlotRow>& rows,
                                    const std::string& axis) {
  std::string out = axis + ",method,mode,mean,stddev,n\n";
  for (const auto& r : rows) {
    out += std::to_string(r.axis_value) + "," + r.method + "," + r.mode + "," +
           format_value(r.mean) + "," + format_value(r.stddev) + "," +
           std::to_string(r.n) + "\n";
  }
  return out;
}

}  // namespace qbnn
