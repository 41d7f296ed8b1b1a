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
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "qbnn/model.hpp"
#include "qbnn/train.hpp"

namespace qbnn {

// Self-describing JSON checkpoint. A float checkpoint carries the graph
// topology and float parameters; a finalised one additionally carries, per
// layer, (bits, scale, zero point, signedness) for every frozen site, the
// integer weight payloads and the offline constants. The format is stable
// within a major version: readers reject other major versions.
constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "qbnn-model";

namespace detail {

using nlohmann::json;

inline json site_to_json(const SqSite& s) {
  if (!s.frozen) return nullptr;
  const QuantParams& p = *s.frozen;
  return json{{"scale", p.scale},
              {"zero_point", p.zero_point},
              {"bits", p.bits},
              {"signed", p.is_signed}};
}

inline void site_from_json(const json& j, SqSite& s) {
  if (j.is_null()) return;
  QuantParams p;
  p.scale = j.at("scale").get<double>();
  p.zero_point = j.at("zero_point").get<std::int32_t>();
  p.bits = j.at("bits").get<int>();
  p.is_signed = j.at("signed").get<bool>();
  s.bits = p.bits;
  s.is_signed = p.is_signed;
  s.frozen = p;
}

template <typename T>
json tensor_to_json(const TensorT<T>& t) {
  return json{{"shape", t.shape()}, {"data", t.data()}};
}

template <typename T>
TensorT<T> tensor_from_json(const json& j) {
  return TensorT<T>::from_data(j.at("shape").get<std::vector<std::size_t>>(),
                               j.at("data").get<std::vector<T>>());
}

inline json int_tensor_to_json(const IntTensor& t) {
  return json{{"shape", t.shape},
              {"data", t.data},
              {"scale", t.params.scale},
              {"zero_point", t.params.zero_point},
              {"bits", t.params.bits},
              {"signed", t.params.is_signed}};
}

inline IntTensor int_tensor_from_json(const json& j) {
  IntTensor t;
  t.shape = j.at("shape").get<std::vector<std::size_t>>();
  t.data = j.at("data").get<std::vector<std::int32_t>>();
  t.params.scale = j.at("scale").get<double>();
  t.params.zero_point = j.at("zero_point").get<std::int32_t>();
  t.params.bits = j.at("bits").get<int>();
  t.params.is_signed = j.at("signed").get<bool>();
  return t;
}

inline json model_to_json(const Mlp& m) {
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["task"] = m.task == Task::Regression ? "regression" : "classification";
  switch (m.method) {
    case Method::Pointwise: j["method"] = "pointwise"; break;
    case Method::Mcd: j["method"] = "mcd"; break;
    case Method::Bbb: j["method"] = "bbb"; break;
  }
  j["dropout_p"] = m.dropout_p;
  json layers = json::array();
  for (const auto& layer : m.layers) {
    json lj;
    lj["in"] = layer.in_dim;
    lj["out"] = layer.out_dim;
    lj["relu"] = layer.relu_after;
    lj["bias"] = tensor_to_json(layer.bias);
    if (m.method == Method::Bbb) {
      lj["mu"] = tensor_to_json(layer.mu);
      lj["rho"] = tensor_to_json(layer.rho);
    } else {
      lj["weight"] = tensor_to_json(layer.weight);
    }
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  if (m.finalised) {
    json q;
    q["bits_w"] = m.bits_w;
    q["bits_a"] = m.bits_a;
    q["input_site"] = site_to_json(m.input_site);
    json qlayers = json::array();
    for (const auto& layer : m.layers) {
      json lj;
      lj["w_site"] = site_to_json(layer.w_site);
      lj["out_site"] = site_to_json(layer.out_site);
      lj["prod_site"] = site_to_json(layer.prod_site);
      lj["mu_site"] = site_to_json(layer.mu_site);
      lj["sigma_site"] = site_to_json(layer.sigma_site);
      lj["eps_prod_site"] = site_to_json(layer.eps_prod_site);
      lj["qweight"] =
          layer.qweight ? int_tensor_to_json(*layer.qweight) : json(nullptr);
      lj["qmu"] = layer.qmu ? int_tensor_to_json(*layer.qmu) : json(nullptr);
      lj["qsigma"] =
          layer.qsigma ? int_tensor_to_json(*layer.qsigma) : json(nullptr);
      if (layer.offline) {
        lj["offline"] = json{{"col_sums_w", layer.offline->col_sums_w},
                             {"const_term", layer.offline->const_term},
                             {"fused_bias", layer.offline->fused_bias}};
      } else {
        lj["offline"] = nullptr;
      }
      qlayers.push_back(std::move(lj));
    }
    q["layers"] = std::move(qlayers);
    j["quant"] = std::move(q);
  }
  return j;
}

inline Mlp model_from_json(const json& j) {
  if (j.at("format").get<std::string>() != kCheckpointFormat) {
    throw std::runtime_error("checkpoint: not a qbnn model file");
  }
  if (j.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version");
  }
  Mlp m;
  m.task = j.at("task").get<std::string>() == "regression"
               ? Task::Regression
               : Task::Classification;
  const std::string method = j.at("method").get<std::string>();
  if (method == "pointwise") m.method = Method::Pointwise;
  else if (method == "mcd") m.method = Method::Mcd;
  else if (method == "bbb") m.method = Method::Bbb;
  else throw std::runtime_error("checkpoint: unknown method " + method);
  m.dropout_p = j.at("dropout_p").get<double>();
  for (const auto& lj : j.at("layers")) {
    DenseLayerT<float> layer;
    layer.in_dim = lj.at("in").get<std::size_t>();
    layer.out_dim = lj.at("out").get<std::size_t>();
    layer.relu_after = lj.at("relu").get<bool>();
    layer.bias = tensor_from_json<float>(lj.at("bias"));
    if (m.method == Method::Bbb) {
      layer.mu = tensor_from_json<float>(lj.at("mu"));
      layer.rho = tensor_from_json<float>(lj.at("rho"));
    } else {
      layer.weight = tensor_from_json<float>(lj.at("weight"));
    }
    m.layers.push_back(std::move(layer));
  }
  if (j.contains("quant")) {
    const json& q = j.at("quant");
    m.bits_w = q.at("bits_w").get<int>();
    m.bits_a = q.at("bits_a").get<int>();
    site_from_json(q.at("input_site"), m.input_site);
    const json& qlayers = q.at("layers");
    if (qlayers.size() != m.layers.size()) {
      throw std::runtime_error("checkpoint: quant/layer count mismatch");
    }
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      auto& layer = m.layers[i];
      const json& lj = qlayers[i];
      site_from_json(lj.at("w_site"), layer.w_site);
      site_from_json(lj.at("out_site"), layer.out_site);
      site_from_json(lj.at("prod_site"), layer.prod_site);
      site_from_json(lj.at("mu_site"), layer.mu_site);
      site_from_json(lj.at("sigma_site"), layer.sigma_site);
      site_from_json(lj.at("eps_prod_site"), layer.eps_prod_site);
      if (!lj.at("qweight").is_null())
        layer.qweight = int_tensor_from_json(lj.at("qweight"));
      if (!lj.at("qmu").is_null())
        layer.qmu = int_tensor_from_json(lj.at("qmu"));
      if (!lj.at("qsigma").is_null())
        layer.qsigma = int_tensor_from_json(lj.at("qsigma"));
      if (!lj.at("offline").is_null()) {
        OfflineConstants off;
        off.col_sums_w =
            lj.at("offline").at("col_sums_w").get<std::vector<std::int32_t>>();
        off.const_term = lj.at("offline").at("const_term").get<std::int32_t>();
        off.fused_bias =
            lj.at("offline").at("fused_bias").get<std::vector<std::int32_t>>();
        layer.offline = std::move(off);
      }
    }
    m.sq_inserted = true;
    m.finalised = true;
  }
  return m;
}

}  // namespace detail

/// Either a single model or an SGHMC ensemble, as stored on disk.
struct Checkpoint {
  bool is_ensemble = false;
  Mlp model;
  SghmcEnsemble ensemble;

  Task task() const {
    return is_ensemble ? ensemble.members.front().task : model.task;
  }
  bool finalised() const {
    if (!is_ensemble) return model.finalised;
    for (const auto& member : ensemble.members)
      if (!member.finalised) return false;
    return true;
  }
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json j;
  if (ckpt.is_ensemble) {
    j["format"] = kCheckpointFormat;
    j["version"] = kCheckpointVersion;
    j["method"] = "sghmc";
    nlohmann::json members = nlohmann::json::array();
    for (const auto& member : ckpt.ensemble.members)
      members.push_back(detail::model_to_json(member));
    j["members"] = std::move(members);
  } else {
    j = detail::model_to_json(ckpt.model);
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << j.dump(1, '\t') << "\n";
}

/// One line-delimited structured record per training epoch.
inline std::string format_epoch_log(const EpochLog& log) {
  nlohmann::json j;
  j["epoch"] = log.epoch;
  j["data_term"] = log.data_term;
  j["reg_term"] = log.reg_term;
  nlohmann::json obs = nlohmann::json::array();
  for (const auto& o : log.observers) {
    obs.push_back({{"site", o.site}, {"a", o.a}, {"b", o.b}});
  }
  j["observers"] = std::move(obs);
  return j.dump();
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  Checkpoint ckpt;
  if (j.contains("members")) {
    ckpt.is_ensemble = true;
    for (const auto& mj : j.at("members"))
      ckpt.ensemble.members.push_back(detail::model_from_json(mj));
    if (ckpt.ensemble.members.empty()) {
      throw std::runtime_error("checkpoint: empty ensemble");
    }
  } else {
    ckpt.model = detail::model_from_json(j);
  }
  return ckpt;
}

}  // namespace qbnn
