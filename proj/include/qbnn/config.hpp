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

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbnn/data.hpp"
#include "qbnn/train.hpp"

namespace qbnn {

enum class MethodKind { Pointwise, Mcd, Bbb, Sghmc };
enum class DatasetSource { Synthetic, Csv, Idx };

inline std::string to_string(MethodKind m) {
  switch (m) {
    case MethodKind::Pointwise: return "pointwise";
    case MethodKind::Mcd: return "mcd";
    case MethodKind::Bbb: return "bbb";
    case MethodKind::Sghmc: return "sghmc";
  }
  return "?";
}

inline MethodKind method_kind_from_string(const std::string& s) {
  if (s == "pointwise") return MethodKind::Pointwise;
  if (s == "mcd") return MethodKind::Mcd;
  if (s == "bbb") return MethodKind::Bbb;
  if (s == "sghmc") return MethodKind::Sghmc;
  throw std::invalid_argument("unknown method '" + s + "'");
}

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::Float: return "float";
    case Mode::Simulated: return "simulated";
    case Mode::Integer: return "integer";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "float") return Mode::Float;
  if (s == "simulated") return Mode::Simulated;
  if (s == "integer") return Mode::Integer;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

/// One augmentation request, e.g. "rotation:45".
struct AugmentSpec {
  AugmentKind kind = AugmentKind::Rotation;
  double strength = 45.0;

  static AugmentSpec parse(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) {
      throw std::invalid_argument("augment spec must be kind:strength, got '" +
                                  s + "'");
    }
    AugmentSpec spec;
    spec.kind = augment_kind_from_string(s.substr(0, colon));
    spec.strength = std::stod(s.substr(colon + 1));
    return spec;
  }
};

/// Experiment configuration: sectioned key = value text. Unknown keys are
/// hard errors.
struct ExperimentConfig {
  Task task = Task::Regression;
  MethodKind method = MethodKind::Mcd;
  DatasetSource dataset = DatasetSource::Synthetic;
  std::string dataset_name = "synthetic";

  // [data]
  std::string csv_path;
  std::string idx_images, idx_labels;
  double train_fraction = 0.8, val_fraction = 0.1;
  std::size_t synth_train = 800, synth_val = 200, synth_test = 1000;
  std::size_t image_train = 1000;
  std::uint64_t data_seed = 1;

  // [model]
  std::vector<std::size_t> hidden = {100, 100, 100};
  double dropout_p = 0.1;
  double prior_sigma = 1.0;

  // [train]
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double kl_weight = -1.0;

  // [sghmc]
  std::size_t sghmc_pretrain_epochs = 40;
  double sghmc_eta = 1e-6;
  double sghmc_friction = 0.05;
  std::size_t sghmc_burnin_steps = 250;
  std::size_t sghmc_thinning = 40;
  std::size_t sghmc_samples = 20;

  // [qat]
  QatConfig qat;

  // [eval]
  std::size_t mc_samples = 20;  // L
  double sigma_obs = 1.0;
  std::size_t ece_bins = 10;
  std::vector<AugmentSpec> confusion;

  // [sweep]
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<MethodKind> sweep_methods = {MethodKind::Pointwise, MethodKind::Mcd,
                                           MethodKind::Bbb, MethodKind::Sghmc};
  std::vector<int> sweep_bits_w = {8};
  std::vector<int> sweep_bits_a = {7, 6, 5, 4, 3};
  std::vector<Mode> sweep_modes = {Mode::Float, Mode::Simulated, Mode::Integer};

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_string(const std::string& text);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Flat section.key -> value map with unknown-key accounting.
class KvReader {
 public:
  explicit KvReader(const std::string& text) {
    std::stringstream ss(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(ss, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') {
          throw std::invalid_argument("config: malformed section at line " +
                                      std::to_string(line_no));
        }
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("config: expected key = value at line " +
                                    std::to_string(line_no));
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        throw std::invalid_argument("config: empty key at line " +
                                    std::to_string(line_no));
      }
      map_[section.empty() ? key : section + "." + key] = value;
    }
  }

  bool take(const std::string& key, std::string& out) {
    auto it = map_.find(key);
    if (it == map_.end()) return false;
    out = it->second;
    map_.erase(it);
    return true;
  }

  template <typename F>
  void take_with(const std::string& key, F&& f) {
    std::string v;
    if (take(key, v)) f(v);
  }

  void require_empty() const {
    if (map_.empty()) return;
    std::string keys;
    for (const auto& [k, v] : map_) {
      if (!keys.empty()) keys += ", ";
      keys += k;
    }
    throw std::invalid_argument("config: unknown keys: " + keys);
  }

 private:
  std::map<std::string, std::string> map_;
};

inline std::size_t to_size(const std::string& v) {
  return static_cast<std::size_t>(std::stoull(v));
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: expected boolean, got '" + v + "'");
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_string(const std::string& text) {
  using detail::split_list;
  using detail::to_bool;
  using detail::to_size;
  detail::KvReader kv(text);
  ExperimentConfig c;
  kv.take_with("task", [&](const std::string& v) {
    if (v == "regression") c.task = Task::Regression;
    else if (v == "classification") c.task = Task::Classification;
    else throw std::invalid_argument("config: unknown task '" + v + "'");
  });
  kv.take_with("method", [&](const std::string& v) {
    c.method = method_kind_from_string(v);
  });
  kv.take_with("dataset", [&](const std::string& v) {
    if (v == "synthetic") c.dataset = DatasetSource::Synthetic;
    else if (v == "csv") c.dataset = DatasetSource::Csv;
    else if (v == "idx") c.dataset = DatasetSource::Idx;
    else throw std::invalid_argument("config: unknown dataset '" + v + "'");
  });
  kv.take_with("name", [&](const std::string& v) { c.dataset_name = v; });

  kv.take_with("data.csv_path", [&](const std::string& v) { c.csv_path = v; });
  kv.take_with("data.idx_images", [&](const std::string& v) { c.idx_images = v; });
  kv.take_with("data.idx_labels", [&](const std::string& v) { c.idx_labels = v; });
  kv.take_with("data.train_fraction",
               [&](const std::string& v) { c.train_fraction = std::stod(v); });
  kv.take_with("data.val_fraction",
               [&](const std::string& v) { c.val_fraction = std::stod(v); });
  kv.take_with("data.synth_train",
               [&](const std::string& v) { c.synth_train = to_size(v); });
  kv.take_with("data.synth_val",
               [&](const std::string& v) { c.synth_val = to_size(v); });
  kv.take_with("data.synth_test",
               [&](const std::string& v) { c.synth_test = to_size(v); });
  kv.take_with("data.image_train",
               [&](const std::string& v) { c.image_train = to_size(v); });
  kv.take_with("data.seed",
               [&](const std::string& v) { c.data_seed = std::stoull(v); });

  kv.take_with("model.hidden", [&](const std::string& v) {
    c.hidden.clear();
    for (const auto& item : split_list(v)) c.hidden.push_back(to_size(item));
  });
  kv.take_with("model.dropout_p",
               [&](const std::string& v) { c.dropout_p = std::stod(v); });
  kv.take_with("model.prior_sigma",
               [&](const std::string& v) { c.prior_sigma = std::stod(v); });

  kv.take_with("train.epochs",
               [&](const std::string& v) { c.epochs = to_size(v); });
  kv.take_with("train.batch_size",
               [&](const std::string& v) { c.batch_size = to_size(v); });
  kv.take_with("train.lr", [&](const std::string& v) { c.lr = std::stod(v); });
  kv.take_with("train.momentum",
               [&](const std::string& v) { c.momentum = std::stod(v); });
  kv.take_with("train.kl_weight",
               [&](const std::string& v) { c.kl_weight = std::stod(v); });

  kv.take_with("sghmc.pretrain_epochs", [&](const std::string& v) {
    c.sghmc_pretrain_epochs = to_size(v);
  });
  kv.take_with("sghmc.eta",
               [&](const std::string& v) { c.sghmc_eta = std::stod(v); });
  kv.take_with("sghmc.friction",
               [&](const std::string& v) { c.sghmc_friction = std::stod(v); });
  kv.take_with("sghmc.burnin_steps", [&](const std::string& v) {
    c.sghmc_burnin_steps = to_size(v);
  });
  kv.take_with("sghmc.thinning",
               [&](const std::string& v) { c.sghmc_thinning = to_size(v); });
  kv.take_with("sghmc.samples",
               [&](const std::string& v) { c.sghmc_samples = to_size(v); });

  kv.take_with("qat.epochs",
               [&](const std::string& v) { c.qat.epochs = to_size(v); });
  kv.take_with("qat.lr_factor",
               [&](const std::string& v) { c.qat.lr_factor = std::stod(v); });
  kv.take_with("qat.observer_momentum", [&](const std::string& v) {
    c.qat.observer_momentum = std::stod(v);
  });
  kv.take_with("qat.bits_w",
               [&](const std::string& v) { c.qat.bits_w = std::stoi(v); });
  kv.take_with("qat.bits_a",
               [&](const std::string& v) { c.qat.bits_a = std::stoi(v); });
  kv.take_with("qat.overflow_guard", [&](const std::string& v) {
    c.qat.enforce_overflow_guard = to_bool(v);
  });
  kv.take_with("qat.freeze_elbo_regulariser", [&](const std::string& v) {
    c.qat.freeze_elbo_regulariser = to_bool(v);
  });

  kv.take_with("eval.samples",
               [&](const std::string& v) { c.mc_samples = to_size(v); });
  kv.take_with("eval.sigma_obs",
               [&](const std::string& v) { c.sigma_obs = std::stod(v); });
  kv.take_with("eval.ece_bins",
               [&](const std::string& v) { c.ece_bins = to_size(v); });
  kv.take_with("eval.confusion", [&](const std::string& v) {
    c.confusion.clear();
    for (const auto& item : split_list(v))
      c.confusion.push_back(AugmentSpec::parse(item));
  });

  kv.take_with("sweep.seeds", [&](const std::string& v) {
    c.seeds.clear();
    for (const auto& item : split_list(v)) c.seeds.push_back(std::stoull(item));
  });
  kv.take_with("sweep.methods", [&](const std::string& v) {
    c.sweep_methods.clear();
    for (const auto& item : split_list(v))
      c.sweep_methods.push_back(method_kind_from_string(item));
  });
  kv.take_with("sweep.bits_w", [&](const std::string& v) {
    c.sweep_bits_w.clear();
    for (const auto& item : split_list(v)) c.sweep_bits_w.push_back(std::stoi(item));
  });
  kv.take_with("sweep.bits_a", [&](const std::string& v) {
    c.sweep_bits_a.clear();
    for (const auto& item : split_list(v)) c.sweep_bits_a.push_back(std::stoi(item));
  });
  kv.take_with("sweep.modes", [&](const std::string& v) {
    c.sweep_modes.clear();
    for (const auto& item : split_list(v))
      c.sweep_modes.push_back(mode_from_string(item));
  });

  kv.require_empty();
  return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

}  // namespace qbnn
