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

#include <optional>
#include <stdexcept>
#include <vector>

#include "qbnn/layers.hpp"

namespace qbnn {

/// Multilayer perceptron with a method tag. Dropout (MCD) is applied before
/// every weight-bearing layer except the first; BBB layers sample their
/// weights per forward pass.
template <typename T>
struct MlpT {
  Task task = Task::Regression;
  Method method = Method::Pointwise;
  double dropout_p = 0.1;
  std::vector<DenseLayerT<T>> layers;
  SqSite input_site;
  int bits_w = 8, bits_a = 7;
  bool sq_inserted = false;
  bool finalised = false;

  std::size_t in_dim() const { return layers.front().in_dim; }
  std::size_t out_dim() const { return layers.back().out_dim; }
};

using Mlp = MlpT<float>;

/// He-style initialisation; BBB additionally gets rho set so that
/// softplus(rho) is about 5% of the weight scale.
template <typename T>
MlpT<T> make_mlp(Task task, Method method, const std::vector<std::size_t>& dims,
                 SeededRng& rng, double dropout_p = 0.1) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need >= 2 dims");
  if (method == Method::Mcd && (dropout_p < 0.0 || dropout_p >= 1.0)) {
    throw std::invalid_argument("make_mlp: dropout_p must be in [0, 1)");
  }
  MlpT<T> m;
  m.task = task;
  m.method = method;
  m.dropout_p = dropout_p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayerT<T> layer;
    layer.in_dim = dims[i];
    layer.out_dim = dims[i + 1];
    layer.relu_after = (i + 2 < dims.size());
    const double std = std::sqrt(2.0 / static_cast<double>(dims[i]));
    layer.weight = TensorT<T>({dims[i], dims[i + 1]});
    for (auto& v : layer.weight.data())
      v = static_cast<T>(rng.next_gaussian() * std);
    layer.bias = TensorT<T>({dims[i + 1]});
    if (method == Method::Bbb) {
      layer.mu = layer.weight;
      layer.weight = TensorT<T>();
      const double sig0 = 0.05 * std;
      const T rho0 = static_cast<T>(std::log(std::expm1(sig0)));
      layer.rho = TensorT<T>({dims[i], dims[i + 1]}, rho0);
    }
    m.layers.push_back(std::move(layer));
  }
  return m;
}

struct QatBits {
  int bits_w = 8;
  int bits_a = 7;
  double observer_momentum = 0.01;
};

/// Step 2 of the fine-tuning procedure: attach simulated-quantisation sites.
/// Weight-side tensors are signed at bits_w; activations unsigned at bits_a.
template <typename T>
void insert_sq(MlpT<T>& m, const QatBits& bits) {
  m.bits_w = bits.bits_w;
  m.bits_a = bits.bits_a;
  m.input_site.configure(bits.bits_a, false, bits.observer_momentum);
  for (auto& layer : m.layers) {
    layer.w_site.configure(bits.bits_w, true, bits.observer_momentum);
    layer.out_site.configure(bits.bits_a, false, bits.observer_momentum);
    layer.prod_site.configure(bits.bits_a, false, bits.observer_momentum);
    layer.mu_site.configure(bits.bits_w, true, bits.observer_momentum);
    layer.sigma_site.configure(bits.bits_w, false, bits.observer_momentum);
    layer.eps_prod_site.configure(bits.bits_w, true, bits.observer_momentum);
    layer.qweight.reset();
    layer.offline.reset();
    layer.qmu.reset();
    layer.qsigma.reset();
  }
  m.sq_inserted = true;
  m.finalised = false;
}

template <typename T>
struct LayerCacheT {
  TensorT<T> input;      // what the matmul consumed
  TensorT<T> pre;        // pre-activation output
  TensorT<T> w_eff;      // effective weights used
  TensorT<T> drop_mask;  // {0, 1/(1-p)} mask, empty when no dropout
  TensorT<T> prod_ste, w_ste, out_ste;
  TensorT<T> eps;        // BBB noise draw
  BbbWeightStes<T> bbb_stes;
};

template <typename T>
struct ForwardCacheT {
  Mode mode = Mode::Float;
  std::vector<LayerCacheT<T>> layers;
};

namespace detail {

/// Bias as the integer kernel will see it: rounded onto the Sw*Si
/// accumulator grid. The grid is so fine that clamping never occurs, so no
/// STE mask is needed.
template <typename T>
TensorT<T> fused_bias_values(const TensorT<T>& bias, double sw, double si) {
  const double acc_scale = sw * si;
  TensorT<T> out = bias;
  for (auto& v : out.data()) {
    v = static_cast<T>(round_half_away(static_cast<double>(v) / acc_scale) *
                       acc_scale);
  }
  return out;
}

}  // namespace detail

/// Float / simulated forward. `observing` turns on range recording (the
/// fine-tuning regime); dropout masks and BBB noise are drawn from rng when
/// given. A cache captures everything backward() needs.
template <typename T>
TensorT<T> forward(MlpT<T>& m, const TensorT<T>& x, Mode mode,
                   SeededRng* rng = nullptr, bool observing = false,
                   ForwardCacheT<T>* cache = nullptr) {
  if (mode == Mode::Integer) {
    throw std::invalid_argument("forward: use forward_integer for integer mode");
  }
  const bool sim = mode == Mode::Simulated;
  if (sim && !m.sq_inserted) {
    throw std::logic_error("forward: simulated mode before insert_sq");
  }
  if (cache) {
    cache->mode = mode;
    cache->layers.assign(m.layers.size(), {});
  }
  TensorT<T> cur = x;
  double in_scale = 1.0;
  if (sim) {
    cur = m.input_site.apply(x, observing);
    in_scale = m.input_site.params().scale;
  }
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& layer = m.layers[i];
    LayerCacheT<T>* lc = cache ? &cache->layers[i] : nullptr;

    // Dropout before every weight-bearing layer except the first.
    TensorT<T> used = cur;
    if (m.method == Method::Mcd && i > 0 && rng != nullptr) {
      TensorT<T> mask = bernoulli_mask<T>(*rng, cur.shape(), m.dropout_p);
      const T inv_keep = static_cast<T>(1.0 / (1.0 - m.dropout_p));
      for (auto& v : mask.data()) v *= inv_keep;
      used = hadamard(cur, mask);
      if (sim) {
        used = layer.prod_site.apply(used, observing,
                                     lc ? &lc->prod_ste : nullptr);
        in_scale = layer.prod_site.params().scale;
      }
      if (lc) lc->drop_mask = std::move(mask);
    }

    // Effective weights.
    TensorT<T> w_eff;
    if (m.method == Method::Bbb) {
      if (rng == nullptr) {
        throw std::invalid_argument("forward: BBB needs an rng to sample weights");
      }
      TensorT<T> eps = gaussian_sample<T>(*rng, {layer.in_dim, layer.out_dim});
      w_eff = bbb_effective_weights(layer, eps, mode, observing,
                                    lc ? &lc->bbb_stes : nullptr);
      if (lc) lc->eps = std::move(eps);
    } else if (sim) {
      w_eff = layer.w_site.apply(layer.weight, observing,
                                 lc ? &lc->w_ste : nullptr);
    } else {
      w_eff = layer.weight;
    }

    TensorT<T> b_eff = layer.bias;
    if (sim) {
      b_eff = detail::fused_bias_values(layer.bias,
                                        layer.w_site.params().scale, in_scale);
    }

    TensorT<T> pre = add_row_broadcast(matmul(used, w_eff), b_eff);
    TensorT<T> h = layer.relu_after ? relu(pre) : pre;
    if (sim) {
      h = layer.out_site.apply(h, observing, lc ? &lc->out_ste : nullptr);
      in_scale = layer.out_site.params().scale;
    }
    if (lc) {
      lc->input = std::move(used);
      lc->pre = std::move(pre);
      lc->w_eff = std::move(w_eff);
    }
    cur = std::move(h);
  }
  return cur;
}

template <typename T>
struct LayerGradsT {
  TensorT<T> w, b;       // pointwise-style
  TensorT<T> mu, rho;    // BBB
};

template <typename T>
struct GradsT {
  std::vector<LayerGradsT<T>> layers;
};

/// Backpropagation through the cached forward. Straight-through estimation:
/// each simulated-quantisation node passes gradient where its STE mask is 1
/// and blocks it where the value saturated.
template <typename T>
GradsT<T> backward(MlpT<T>& m, const ForwardCacheT<T>& cache,
                   const TensorT<T>& grad_out) {
  const bool sim = cache.mode == Mode::Simulated;
  GradsT<T> grads;
  grads.layers.resize(m.layers.size());
  TensorT<T> g = grad_out;
  for (std::size_t ii = m.layers.size(); ii-- > 0;) {
    auto& layer = m.layers[ii];
    const auto& lc = cache.layers[ii];
    auto& lg = grads.layers[ii];

    if (sim) g = hadamard(g, lc.out_ste);
    if (layer.relu_after) {
      for (std::size_t k = 0; k < g.size(); ++k)
        if (lc.pre[k] <= T(0)) g[k] = T(0);
    }

    lg.b = TensorT<T>({layer.out_dim});
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) lg.b[c] += g(r, c);

    TensorT<T> gw_eff = matmul(transpose(lc.input), g);
    TensorT<T> g_in = matmul(g, transpose(lc.w_eff));

    if (m.method == Method::Bbb) {
      TensorT<T> g_sum = sim ? hadamard(gw_eff, lc.bbb_stes.w_sum) : gw_eff;
      lg.mu = sim ? hadamard(g_sum, lc.bbb_stes.mu) : g_sum;
      TensorT<T> g_prod = sim ? hadamard(g_sum, lc.bbb_stes.prod) : g_sum;
      TensorT<T> g_sig = hadamard(g_prod, lc.eps);
      if (sim) g_sig = hadamard(g_sig, lc.bbb_stes.sigma);
      lg.rho = TensorT<T>(layer.rho.shape());
      for (std::size_t k = 0; k < lg.rho.size(); ++k)
        lg.rho[k] = g_sig[k] * logistic(layer.rho[k]);
    } else {
      lg.w = sim ? hadamard(gw_eff, lc.w_ste) : gw_eff;
    }

    if (!lc.drop_mask.empty()) {
      if (sim) g_in = hadamard(g_in, lc.prod_ste);
      g_in = hadamard(g_in, lc.drop_mask);
    }
    g = std::move(g_in);
  }
  return grads;
}

/// Step 4 of the fine-tuning procedure: freeze every observed site, quantise
/// the weight-side tensors and precompute the offline constants. BBB layers
/// store quantised mu and softplus(rho); their per-sample weights and offline
/// constants are materialised at evaluation time.
template <typename T>
void finalise_quantisation(MlpT<T>& m) {
  if (!m.sq_inserted) {
    throw std::logic_error("finalise_quantisation: insert_sq first");
  }
  auto freeze_if_observed = [](SqSite& s) {
    if (s.obs.initialised() && !s.frozen) s.freeze();
  };
  freeze_if_observed(m.input_site);
  if (!m.input_site.frozen) {
    throw std::logic_error("finalise_quantisation: input site never observed");
  }
  QuantParams in_p = m.input_site.params();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& layer = m.layers[i];
    freeze_if_observed(layer.w_site);
    freeze_if_observed(layer.out_site);
    freeze_if_observed(layer.prod_site);
    freeze_if_observed(layer.mu_site);
    freeze_if_observed(layer.sigma_site);
    freeze_if_observed(layer.eps_prod_site);
    if (!layer.w_site.frozen || !layer.out_site.frozen) {
      throw std::logic_error("finalise_quantisation: unobserved layer site");
    }
    if (layer.relu_after &&
        layer.out_site.params().zero_point != layer.out_site.params().qmin()) {
      // Post-ReLU ranges include 0 at the bottom, so saturation at qmin
      // realises the ReLU in integer arithmetic. derive_params guarantees
      // this; keep it as a hard invariant.
      throw std::logic_error("finalise_quantisation: ReLU fusion invariant broken");
    }
    const bool has_dropout = m.method == Method::Mcd && i > 0;
    const QuantParams li = has_dropout ? layer.prod_site.params() : in_p;
    if (m.method == Method::Bbb) {
      TensorT<T> sig(layer.rho.shape());
      for (std::size_t k = 0; k < sig.size(); ++k)
        sig[k] = softplus(layer.rho[k]);
      layer.qmu = quantise(layer.mu, layer.mu_site.params());
      layer.qsigma = quantise(sig, layer.sigma_site.params());
    } else {
      layer.qweight = quantise(layer.weight, layer.w_site.params());
      layer.offline = precompute_offline(*layer.qweight, li, &layer.bias);
    }
    in_p = layer.out_site.params();
  }
  m.finalised = true;
}

/// Bit-exact integer forward. Output is the dequantised final layer output.
template <typename T>
TensorT<T> forward_integer(MlpT<T>& m, const TensorT<T>& x,
                           SeededRng* rng = nullptr,
                           OverflowPolicy policy = default_overflow_policy()) {
  if (!m.finalised) {
    throw std::logic_error("forward_integer: model not finalised");
  }
  if (m.method == Method::Mcd && m.layers.size() > 1 && rng == nullptr) {
    // The offline constants of the hidden layers are fused against the
    // mask-product grid, so masking cannot be skipped.
    throw std::invalid_argument("forward_integer: MCD needs an rng");
  }
  IntTensor q = quantise(x, m.input_site.params());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& layer = m.layers[i];

    if (m.method == Method::Mcd && i > 0 && rng != nullptr) {
      // Same draw sequence as the float/simulated paths.
      TensorT<T> mask = bernoulli_mask<T>(*rng, q.shape, m.dropout_p);
      const QuantParams pp = layer.prod_site.params();
      const Requantizer rq = Requantizer::from_ratio(
          q.params.scale / ((1.0 - m.dropout_p) * pp.scale));
      IntTensor masked;
      masked.shape = q.shape;
      masked.params = pp;
      masked.data.resize(q.data.size());
      for (std::size_t k = 0; k < q.data.size(); ++k) {
        if (mask[k] == T(0)) {
          masked.data[k] = pp.zero_point;  // integer encoding of exact 0
        } else {
          const std::int64_t v =
              static_cast<std::int64_t>(
                  rq.apply(q.data[k] - q.params.zero_point, policy)) +
              pp.zero_point;
          masked.data[k] = static_cast<std::int32_t>(
              std::clamp<std::int64_t>(v, pp.qmin(), pp.qmax()));
        }
      }
      q = std::move(masked);
    }

    IntTensor qw;
    OfflineConstants off;
    if (m.method == Method::Bbb) {
      if (rng == nullptr) {
        throw std::invalid_argument("forward_integer: BBB needs an rng");
      }
      TensorT<T> eps = gaussian_sample<T>(*rng, {layer.in_dim, layer.out_dim});
      qw = bbb_integer_weights(layer, eps, policy);
      off = precompute_offline(qw, q.params, &layer.bias);
    } else {
      qw = *layer.qweight;
      off = *layer.offline;
    }
    const QuantParams out_p = layer.out_site.params();
    const Requantizer mult = Requantizer::from_ratio(
        qw.params.scale * q.params.scale / out_p.scale);
    QMatmulOptions opts;
    opts.overflow = policy;
    q = quantised_matmul(q, qw, off, mult, out_p, opts);
    // ReLU comes for free: Z == qmin on post-ReLU grids, so saturation
    // already clamped negatives to exact zero.
  }
  return dequantise<T>(q);
}

/// Dispatches a single stochastic forward pass in any mode.
template <typename T>
TensorT<T> forward_any(MlpT<T>& m, const TensorT<T>& x, Mode mode,
                       SeededRng* rng) {
  if (mode == Mode::Integer) return forward_integer(m, x, rng);
  return forward(m, x, mode, rng);
}

template <typename T>
struct PredictiveSummaryT {
  TensorT<T> mean;
  TensorT<T> variance;
  std::vector<TensorT<T>> samples;  // retained when requested
};

using PredictiveSummary = PredictiveSummaryT<float>;

namespace detail {

template <typename T>
PredictiveSummaryT<T> summarise(std::vector<TensorT<T>>&& outs, bool keep) {
  PredictiveSummaryT<T> s;
  const std::size_t L = outs.size();
  s.mean = TensorT<T>(outs.front().shape());
  for (const auto& o : outs)
    for (std::size_t k = 0; k < o.size(); ++k) s.mean[k] += o[k];
  for (auto& v : s.mean.data()) v = static_cast<T>(v / static_cast<double>(L));
  s.variance = TensorT<T>(outs.front().shape());
  for (const auto& o : outs)
    for (std::size_t k = 0; k < o.size(); ++k) {
      const double d = static_cast<double>(o[k]) - s.mean[k];
      s.variance[k] += static_cast<T>(d * d);
    }
  for (auto& v : s.variance.data())
    v = static_cast<T>(v / static_cast<double>(L));
  if (keep) s.samples = std::move(outs);
  return s;
}

}  // namespace detail

/// Monte Carlo predictive over L samples: mean and population variance of
/// the per-sample predictive outputs (softmax probabilities for
/// classification, raw outputs for regression). Pointwise models are
/// deterministic, so a single pass suffices and the variance is zero.
template <typename T>
PredictiveSummaryT<T> predictive(MlpT<T>& m, const TensorT<T>& x, std::size_t L,
                                 SeededRng& rng, Mode mode,
                                 bool keep_samples = false) {
  if (L < 1) throw std::invalid_argument("predictive: L must be >= 1");
  const std::size_t passes = m.method == Method::Pointwise ? 1 : L;
  std::vector<TensorT<T>> outs;
  outs.reserve(passes);
  for (std::size_t l = 0; l < passes; ++l) {
    TensorT<T> o = forward_any(m, x, mode, &rng);
    if (m.task == Task::Classification) o = softmax_rows(o);
    outs.push_back(std::move(o));
  }
  return detail::summarise(std::move(outs), keep_samples);
}

/// Posterior-sample ensemble: L weight snapshots, each with its own sites
/// and quantisation artifacts. No run-time sampling at evaluation.
template <typename T>
struct SghmcEnsembleT {
  std::vector<MlpT<T>> members;

  std::size_t size() const { return members.size(); }
};

using SghmcEnsemble = SghmcEnsembleT<float>;

/// Forward through snapshot l (0-based) only.
template <typename T>
TensorT<T> sghmc_forward(SghmcEnsembleT<T>& ens, std::size_t l,
                         const TensorT<T>& x, Mode mode) {
  if (l >= ens.members.size()) {
    throw std::out_of_range("sghmc_forward: sample index out of range");
  }
  return forward_any(ens.members[l], x, mode, nullptr);
}

/// Ensemble predictive: the arithmetic mean and variance over all members.
template <typename T>
PredictiveSummaryT<T> predictive(SghmcEnsembleT<T>& ens, const TensorT<T>& x,
                                 Mode mode, bool keep_samples = false) {
  if (ens.members.empty()) {
    throw std::invalid_argument("predictive: empty ensemble");
  }
  std::vector<TensorT<T>> outs;
  outs.reserve(ens.members.size());
  for (std::size_t l = 0; l < ens.members.size(); ++l) {
    TensorT<T> o = sghmc_forward(ens, l, x, mode);
    if (ens.members[l].task == Task::Classification) o = softmax_rows(o);
    outs.push_back(std::move(o));
  }
  return detail::summarise(std::move(outs), keep_samples);
}

}  // namespace qbnn
