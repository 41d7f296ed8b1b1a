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

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qbnn/qkernel.hpp"
#include "qbnn/quant.hpp"
#include "qbnn/rng.hpp"
#include "qbnn/tensor.hpp"

namespace qbnn {

enum class Mode { Float, Simulated, Integer };
enum class Method { Pointwise, Mcd, Bbb };
enum class Task { Regression, Classification };

/// Fixed grid for the quantised BBB noise draw. Z = 0 cannot encode negative
/// values on an unsigned grid, so the grid is signed.
inline QuantParams bbb_eps_params(int bits) {
  return QuantParams{.scale = 0.0236, .zero_point = 0, .bits = bits,
                     .is_signed = true};
}

/// One simulated-quantisation site: a range observer plus, after
/// finalisation, frozen (S, Z).
struct SqSite {
  RangeObserver obs{0.01};
  int bits = 8;
  bool is_signed = false;
  std::optional<QuantParams> frozen;

  void configure(int b, bool sgn, double momentum) {
    bits = b;
    is_signed = sgn;
    obs = RangeObserver(momentum);
    frozen.reset();
  }

  QuantParams params() const {
    if (frozen) return *frozen;
    return derive_params(obs, bits, is_signed);
  }

  void freeze() { frozen = derive_params(obs, bits, is_signed); }

  /// Simulated-quantisation forward: optionally observe, then fake-quantise
  /// with the current params.
  template <typename T>
  TensorT<T> apply(const TensorT<T>& t, bool observe,
                   TensorT<T>* ste = nullptr) {
    if (observe) obs.update(t);
    return fake_quant(t, params(), ste);
  }
};

template <typename T>
T softplus(T x) {
  return x > T(20) ? x : static_cast<T>(std::log1p(std::exp(static_cast<double>(x))));
}

/// d softplus(x) / dx.
template <typename T>
T logistic(T x) {
  return static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
}

/// A fully connected layer. Pointwise-style methods use (weight, bias);
/// Bayes-by-backprop uses (mu, rho, bias) with weight sampled per forward.
template <typename T>
struct DenseLayerT {
  std::size_t in_dim = 0, out_dim = 0;
  bool relu_after = true;

  TensorT<T> weight;  // M x F
  TensorT<T> bias;    // {F}
  TensorT<T> mu, rho; // BBB posterior (M x F), empty otherwise

  // Simulated-quantisation sites. prod_site covers the dropout mask product;
  // mu/sigma/eps_prod sites exist only for BBB.
  SqSite w_site;
  SqSite out_site;
  SqSite prod_site;
  SqSite mu_site, sigma_site, eps_prod_site;

  // Frozen integer artifacts, present once finalised.
  std::optional<IntTensor> qweight;          // pointwise-style weights
  std::optional<OfflineConstants> offline;
  std::optional<IntTensor> qmu, qsigma;      // BBB offline tensors
};

/// Effective (possibly fake-quantised) BBB weights for a given noise draw.
/// Float mode:      w = mu + softplus(rho) . eps
/// Simulated mode:  SQ after mu, after softplus, on eps (fixed grid, eval
///                  only), after the product and after the sum.
/// STE masks for the parameter chain are written when stes != nullptr.
template <typename T>
struct BbbWeightStes {
  TensorT<T> w_sum, mu, prod, sigma;
};

template <typename T>
TensorT<T> bbb_effective_weights(DenseLayerT<T>& layer, const TensorT<T>& eps,
                                 Mode mode, bool observing,
                                 BbbWeightStes<T>* stes = nullptr) {
  TensorT<T> sig(layer.rho.shape());
  for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = softplus(layer.rho[i]);
  if (mode == Mode::Float) {
    TensorT<T> w = layer.mu;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += sig[i] * eps[i];
    return w;
  }
  TensorT<T> mu_hat = layer.mu_site.apply(layer.mu, observing,
                                          stes ? &stes->mu : nullptr);
  TensorT<T> sig_hat =
      layer.sigma_site.apply(sig, observing, stes ? &stes->sigma : nullptr);
  // During fine-tuning the noise is generated in floating-point; at
  // evaluation it is quantised onto the fixed grid, as the integer path does.
  TensorT<T> eps_used = eps;
  if (!observing) {
    eps_used = fake_quant(eps, bbb_eps_params(layer.w_site.bits));
  }
  TensorT<T> prod = hadamard(sig_hat, eps_used);
  TensorT<T> prod_hat = layer.eps_prod_site.apply(prod, observing,
                                                  stes ? &stes->prod : nullptr);
  TensorT<T> w = add(mu_hat, prod_hat);
  return layer.w_site.apply(w, observing, stes ? &stes->w_sum : nullptr);
}

/// Integer-mode BBB weight materialisation from the frozen qmu / qsigma
/// payloads and a fresh noise draw.
template <typename T>
IntTensor bbb_integer_weights(const DenseLayerT<T>& layer, const TensorT<T>& eps,
                              OverflowPolicy policy = default_overflow_policy()) {
  if (!layer.qmu || !layer.qsigma) {
    throw std::logic_error("bbb_integer_weights: layer not finalised");
  }
  IntTensor qeps = quantise(eps, bbb_eps_params(layer.w_site.bits));
  IntTensor qprod =
      mul_quantised(*layer.qsigma, qeps, layer.eps_prod_site.params(), policy);
  return add_quantised(*layer.qmu, qprod, layer.w_site.params(), policy);
}

}  // namespace qbnn
