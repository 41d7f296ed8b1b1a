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
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "qbnn/model.hpp"

namespace qbnn {

struct LossValue {
  double total = 0.0;
  double data_term = 0.0;
  double reg_term = 0.0;
};

// ---------------------------------------------------------------------------
// Data losses (mean over the batch) and their output gradients.
// ---------------------------------------------------------------------------

/// Gaussian negative log likelihood with unit observation noise,
/// averaged over the batch.
template <typename T>
double regression_nll(const TensorT<T>& out, const TensorT<T>& y) {
  check_same_shape(out, y, "regression_nll");
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = static_cast<double>(out[i]) - static_cast<double>(y[i]);
    acc += 0.5 * r * r;
  }
  return acc / static_cast<double>(out.rows()) +
         0.5 * std::log(2.0 * std::numbers::pi);
}

template <typename T>
TensorT<T> regression_nll_grad(const TensorT<T>& out, const TensorT<T>& y) {
  TensorT<T> g = sub(out, y);
  const T inv = static_cast<T>(1.0 / static_cast<double>(out.rows()));
  for (auto& v : g.data()) v *= inv;
  return g;
}

/// Softmax cross-entropy against one-hot targets, averaged over the batch.
template <typename T>
double softmax_xent(const TensorT<T>& logits, const TensorT<T>& one_hot) {
  check_same_shape(logits, one_hot, "softmax_xent");
  TensorT<T> p = softmax_rows(logits);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (one_hot[i] > T(0)) {
      acc -= static_cast<double>(one_hot[i]) *
             std::log(std::max(static_cast<double>(p[i]), 1e-12));
    }
  }
  return acc / static_cast<double>(logits.rows());
}

template <typename T>
TensorT<T> softmax_xent_grad(const TensorT<T>& logits, const TensorT<T>& one_hot) {
  TensorT<T> g = sub(softmax_rows(logits), one_hot);
  const T inv = static_cast<T>(1.0 / static_cast<double>(logits.rows()));
  for (auto& v : g.data()) v *= inv;
  return g;
}

template <typename T>
double data_loss(Task task, const TensorT<T>& out, const TensorT<T>& y) {
  return task == Task::Regression ? regression_nll(out, y)
                                  : softmax_xent(out, y);
}

template <typename T>
TensorT<T> data_loss_grad(Task task, const TensorT<T>& out, const TensorT<T>& y) {
  return task == Task::Regression ? regression_nll_grad(out, y)
                                  : softmax_xent_grad(out, y);
}

// ---------------------------------------------------------------------------
// Parameter plumbing shared by the optimisers.
// ---------------------------------------------------------------------------

template <typename T>
std::vector<TensorT<T>*> trainable_params(MlpT<T>& m) {
  std::vector<TensorT<T>*> out;
  for (auto& layer : m.layers) {
    if (m.method == Method::Bbb) {
      out.push_back(&layer.mu);
      out.push_back(&layer.rho);
    } else {
      out.push_back(&layer.weight);
    }
    out.push_back(&layer.bias);
  }
  return out;
}

/// Gradients flattened in trainable_params order.
template <typename T>
std::vector<TensorT<T>> flatten_grads(const MlpT<T>& m, const GradsT<T>& g) {
  std::vector<TensorT<T>> out;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.method == Method::Bbb) {
      out.push_back(g.layers[i].mu);
      out.push_back(g.layers[i].rho);
    } else {
      out.push_back(g.layers[i].w);
    }
    out.push_back(g.layers[i].b);
  }
  return out;
}

template <typename T>
void check_finite_grads(const std::vector<TensorT<T>>& grads) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (auto v : grads[i].data()) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error("non-finite gradient in parameter tensor " +
                                 std::to_string(i));
      }
    }
  }
}

/// Classical momentum SGD: v <- momentum*v - lr*g; p <- p + v.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<TensorT<T>*>& params,
            const std::vector<TensorT<T>>& grads) {
    if (params.size() != grads.size()) {
      throw std::invalid_argument("sgd_step: params/grads mismatch");
    }
    check_finite_grads(grads);
    if (velocity_.empty()) {
      for (auto* p : params) velocity_.emplace_back(p->shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity_[i];
      auto& p = *params[i];
      if (v.shape() != p.shape()) {
        throw std::invalid_argument("sgd_step: state/param shape mismatch");
      }
      for (std::size_t k = 0; k < p.size(); ++k) {
        v[k] = static_cast<T>(momentum_ * v[k] - lr_ * grads[i][k]);
        p[k] += v[k];
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, momentum_;
  std::vector<TensorT<T>> velocity_;
};

// ---------------------------------------------------------------------------
// SGHMC: noisy momentum updates whose iterates approximate posterior samples.
// ---------------------------------------------------------------------------

struct SghmcConfig {
  double eta = 1e-6;      // step size
  double friction = 0.05; // C > 0
  bool with_noise = true; // off: reduces to momentum SGD with mom = 1 - C
};

template <typename T>
struct SghmcStateT {
  std::vector<TensorT<T>> velocity;
};

/// v <- v - eta * grad - C * v + N(0, 2*C*eta);  w <- w + v.
template <typename T>
void sghmc_step(const std::vector<TensorT<T>*>& params,
                const std::vector<TensorT<T>>& grads, SghmcStateT<T>& state,
                const SghmcConfig& cfg, SeededRng& rng) {
  if (cfg.eta <= 0.0 || cfg.friction <= 0.0) {
    throw std::invalid_argument("sghmc_step: eta and friction must be positive");
  }
  if (params.size() != grads.size()) {
    throw std::invalid_argument("sghmc_step: params/grads mismatch");
  }
  if (state.velocity.empty()) {
    for (auto* p : params) state.velocity.emplace_back(p->shape());
  }
  const double noise_std = std::sqrt(2.0 * cfg.friction * cfg.eta);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& v = state.velocity[i];
    auto& p = *params[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      double nv = static_cast<double>(v[k]) - cfg.eta * grads[i][k] -
                  cfg.friction * v[k];
      if (cfg.with_noise) nv += noise_std * rng.next_gaussian();
      v[k] = static_cast<T>(nv);
      p[k] += v[k];
    }
  }
}

// ---------------------------------------------------------------------------
// BBB evidence lower bound.
// ---------------------------------------------------------------------------

/// Closed-form KL(q || p) for q = N(mu, softplus(rho)^2) against the
/// zero-mean isotropic prior, summed over all weights.
template <typename T>
double bbb_kl(const MlpT<T>& m, double prior_sigma) {
  double kl = 0.0;
  const double sp2 = prior_sigma * prior_sigma;
  for (const auto& layer : m.layers) {
    for (std::size_t k = 0; k < layer.mu.size(); ++k) {
      const double mu = layer.mu[k];
      const double sig = softplus(static_cast<double>(layer.rho[k]));
      kl += std::log(prior_sigma / sig) + (sig * sig + mu * mu) / (2.0 * sp2) -
            0.5;
    }
  }
  return kl;
}

/// Adds kl_weight * dKL/d(mu, rho) into grads.
template <typename T>
void add_kl_grads(const MlpT<T>& m, double kl_weight, double prior_sigma,
                  GradsT<T>& grads) {
  const double sp2 = prior_sigma * prior_sigma;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& layer = m.layers[i];
    auto& lg = grads.layers[i];
    for (std::size_t k = 0; k < layer.mu.size(); ++k) {
      lg.mu[k] += static_cast<T>(kl_weight * layer.mu[k] / sp2);
      const double sig = softplus(static_cast<double>(layer.rho[k]));
      const double dkl_dsig = -1.0 / sig + sig / sp2;
      lg.rho[k] += static_cast<T>(kl_weight * dkl_dsig *
                                  logistic(static_cast<double>(layer.rho[k])));
    }
  }
}

/// ELBO objective for one batch with a single weight sample drawn from
/// noise_seed: data NLL plus kl_weight * KL. Deterministic in
/// (parameters, batch, noise_seed), which is what the finite-difference
/// gradient check relies on. Returns gradients through the reparametrised
/// weights when grads_out is non-null.
template <typename T>
LossValue elbo_loss(MlpT<T>& m, const TensorT<T>& x, const TensorT<T>& y,
                    std::uint64_t noise_seed, double kl_weight,
                    double prior_sigma = 1.0, GradsT<T>* grads_out = nullptr,
                    Mode mode = Mode::Float, bool observing = false,
                    bool skip_kl_grad = false) {
  if (m.method != Method::Bbb) {
    throw std::invalid_argument("elbo_loss: model is not Bayes-by-backprop");
  }
  SeededRng rng(noise_seed);
  LossValue loss;
  if (grads_out) {
    ForwardCacheT<T> cache;
    TensorT<T> out = forward(m, x, mode, &rng, observing, &cache);
    loss.data_term = data_loss(m.task, out, y);
    *grads_out = backward(m, cache, data_loss_grad(m.task, out, y));
    if (!skip_kl_grad) add_kl_grads(m, kl_weight, prior_sigma, *grads_out);
  } else {
    TensorT<T> out = forward(m, x, mode, &rng, observing);
    loss.data_term = data_loss(m.task, out, y);
  }
  loss.reg_term = kl_weight * bbb_kl(m, prior_sigma);
  loss.total = loss.data_term + loss.reg_term;
  return loss;
}

// ---------------------------------------------------------------------------
// Training loops.
// ---------------------------------------------------------------------------

/// One observer's state at the end of an epoch.
struct ObserverSnapshot {
  std::string site;
  double a = 0.0, b = 0.0;
};

/// Per-epoch training record; serialised by the harness as one structured
/// line per epoch.
struct EpochLog {
  std::size_t epoch = 0;
  double data_term = 0.0;
  double reg_term = 0.0;
  std::vector<ObserverSnapshot> observers;
};

using EpochLogger = std::function<void(const EpochLog&)>;

struct TrainConfig {
  std::size_t epochs = 80;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double momentum = 0.9;
  double kl_weight = -1.0;  // < 0: use 1 / num_training_points
  double prior_sigma = 1.0;
  bool skip_kl_grad = false;  // BBB: drop the ELBO regulariser gradient
  EpochLogger logger;  // optional per-epoch record sink
};

template <typename T>
std::vector<ObserverSnapshot> observer_snapshots(const MlpT<T>& m) {
  std::vector<ObserverSnapshot> out;
  auto add = [&out](const std::string& name, const SqSite& s) {
    if (s.obs.initialised()) out.push_back({name, s.obs.a(), s.obs.b()});
  };
  if (!m.sq_inserted) return out;
  add("input", m.input_site);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto& layer = m.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    add(p + "w", layer.w_site);
    add(p + "out", layer.out_site);
    add(p + "prod", layer.prod_site);
    add(p + "mu", layer.mu_site);
    add(p + "sigma", layer.sigma_site);
    add(p + "eps_prod", layer.eps_prod_site);
  }
  return out;
}

inline std::vector<std::size_t> permutation(SeededRng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

template <typename T>
TensorT<T> take_rows(const TensorT<T>& t, const std::vector<std::size_t>& idx,
                     std::size_t begin, std::size_t end) {
  const std::size_t cols = t.cols();
  TensorT<T> out({end - begin, cols});
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r - begin, c) = t(idx[r], c);
  return out;
}

/// Minibatch training. mode == Simulated with observing == true is the
/// fine-tuning regime: ranges are recorded while quantisation is simulated.
/// For BBB the ELBO regulariser gradient is skipped during that regime.
template <typename T>
void fit(MlpT<T>& m, const TensorT<T>& x, const TensorT<T>& y,
         const TrainConfig& cfg, SeededRng& rng, Mode mode = Mode::Float,
         bool observing = false) {
  if (x.rows() != y.rows()) throw std::invalid_argument("fit: row mismatch");
  const std::size_t n = x.rows();
  const double kl_w =
      cfg.kl_weight >= 0.0 ? cfg.kl_weight : 1.0 / static_cast<double>(n);
  SgdMomentum<T> opt(cfg.lr, cfg.momentum);
  auto params = trainable_params(m);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> idx = permutation(rng, n);
    double epoch_data = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      const std::size_t e = std::min(n, s + cfg.batch_size);
      TensorT<T> bx = take_rows(x, idx, s, e);
      TensorT<T> by = take_rows(y, idx, s, e);
      GradsT<T> grads;
      if (m.method == Method::Bbb) {
        const LossValue loss =
            elbo_loss(m, bx, by, rng.next_u64(), kl_w, cfg.prior_sigma, &grads,
                      mode, observing, cfg.skip_kl_grad);
        epoch_data += loss.data_term;
      } else {
        ForwardCacheT<T> cache;
        TensorT<T> out = forward(m, bx, mode, &rng, observing, &cache);
        if (cfg.logger) epoch_data += data_loss(m.task, out, by);
        grads = backward(m, cache, data_loss_grad(m.task, out, by));
      }
      opt.step(params, flatten_grads(m, grads));
      ++batches;
    }
    if (cfg.logger) {
      EpochLog log;
      log.epoch = epoch;
      log.data_term = epoch_data / static_cast<double>(batches);
      log.reg_term =
          m.method == Method::Bbb ? kl_w * bbb_kl(m, cfg.prior_sigma) : 0.0;
      log.observers = observer_snapshots(m);
      cfg.logger(log);
    }
  }
}

/// Mean data loss over a dataset without sampling (pointwise weights or the
/// BBB posterior mean are not used here; this is a convergence probe on the
/// training objective with the stochastic forward).
template <typename T>
double evaluate_loss(MlpT<T>& m, const TensorT<T>& x, const TensorT<T>& y,
                     SeededRng& rng, Mode mode = Mode::Float) {
  TensorT<T> out = forward(m, x, mode, &rng);
  return data_loss(m.task, out, y);
}

// ---------------------------------------------------------------------------
// SGHMC sample collection.
// ---------------------------------------------------------------------------

struct SghmcTrainConfig {
  double eta = 1e-6;
  double friction = 0.05;
  std::size_t batch_size = 32;
  std::size_t burnin_steps = 200;
  std::size_t thinning = 40;
  std::size_t num_samples = 20;  // L
  double prior_sigma = 1.0;
};

/// Runs exactly burnin + L * thinning minibatch SGHMC steps on a pretrained
/// model and snapshots every thinning-th post-burn-in iterate. The gradient
/// estimate is the minibatch mean NLL scaled to the full dataset plus the
/// Gaussian prior gradient, so iterates target the posterior.
template <typename T>
SghmcEnsembleT<T> collect_sghmc_samples(MlpT<T>& m, const TensorT<T>& x,
                                        const TensorT<T>& y,
                                        const SghmcTrainConfig& cfg,
                                        SeededRng& rng) {
  if (m.method == Method::Bbb) {
    throw std::invalid_argument("collect_sghmc_samples: pointwise weights required");
  }
  if (cfg.num_samples == 0 || cfg.thinning == 0) {
    throw std::invalid_argument("collect_sghmc_samples: bad schedule");
  }
  const std::size_t n = x.rows();
  const double data_scale = static_cast<double>(n);
  const double sp2 = cfg.prior_sigma * cfg.prior_sigma;
  SghmcEnsembleT<T> ens;
  SghmcStateT<T> state;
  SghmcConfig step_cfg{.eta = cfg.eta, .friction = cfg.friction,
                       .with_noise = true};
  auto params = trainable_params(m);
  const std::size_t total_steps = cfg.burnin_steps + cfg.num_samples * cfg.thinning;
  std::size_t step = 0;
  std::vector<std::size_t> idx;
  std::size_t cursor = n;  // force reshuffle on first use
  while (step < total_steps) {
    if (cursor >= n) {
      idx = permutation(rng, n);
      cursor = 0;
    }
    const std::size_t e = std::min(n, cursor + cfg.batch_size);
    TensorT<T> bx = take_rows(x, idx, cursor, e);
    TensorT<T> by = take_rows(y, idx, cursor, e);
    cursor = e;

    ForwardCacheT<T> cache;
    TensorT<T> out = forward(m, bx, Mode::Float, &rng, false, &cache);
    GradsT<T> grads = backward(m, cache, data_loss_grad(m.task, out, by));
    std::vector<TensorT<T>> flat = flatten_grads(m, grads);
    for (std::size_t i = 0; i < flat.size(); ++i) {
      for (std::size_t k = 0; k < flat[i].size(); ++k) {
        flat[i][k] = static_cast<T>(flat[i][k] * data_scale +
                                    (*params[i])[k] / sp2);
      }
    }
    check_finite_grads(flat);
    sghmc_step(params, flat, state, step_cfg, rng);
    ++step;
    if (step > cfg.burnin_steps &&
        (step - cfg.burnin_steps) % cfg.thinning == 0) {
      ens.members.push_back(m);  // deep copy by value
    }
  }
  return ens;
}

// ---------------------------------------------------------------------------
// Quantisation-aware fine-tuning.
// ---------------------------------------------------------------------------

struct QatConfig {
  std::size_t epochs = 5;
  double lr_factor = 0.01;  // times the main-phase learning rate
  double base_lr = 0.01;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  int bits_w = 8;
  int bits_a = 7;
  double observer_momentum = 0.01;
  bool enforce_overflow_guard = true;  // n_A <= n_W - 1
  // The ELBO regulariser gradient is skipped while fine-tuning simulates
  // quantisation, so the posterior learned in the main phase is preserved.
  bool freeze_elbo_regulariser = true;
  EpochLogger logger;

  void validate() const {
    if (bits_w < 3 || bits_w > 8) {
      throw std::invalid_argument("QatConfig: bits_w must be in [3, 8]");
    }
    if (bits_a < 3 || bits_a > 7) {
      throw std::invalid_argument("QatConfig: bits_a must be in [3, 7]");
    }
    if (enforce_overflow_guard && bits_a > bits_w - 1) {
      throw std::invalid_argument(
          "QatConfig: overflow guard requires bits_a <= bits_w - 1");
    }
  }
};

/// The fine-tuning procedure: insert simulated-quantisation nodes, fine-tune
/// briefly while observers record ranges, then derive (S, Z) per site,
/// quantise the weights and precompute the offline constants. With zero
/// epochs this degenerates to a single calibration pass over the data.
template <typename T>
void qat_finetune(MlpT<T>& m, const TensorT<T>& x, const TensorT<T>& y,
                  const QatConfig& cfg, SeededRng& rng) {
  cfg.validate();
  insert_sq(m, QatBits{cfg.bits_w, cfg.bits_a, cfg.observer_momentum});
  if (cfg.epochs == 0) {
    const std::size_t n = x.rows();
    std::vector<std::size_t> idx = permutation(rng, n);
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      const std::size_t e = std::min(n, s + cfg.batch_size);
      TensorT<T> bx = take_rows(x, idx, s, e);
      TensorT<T> by_unused = take_rows(y, idx, s, e);
      (void)by_unused;
      forward(m, bx, Mode::Simulated, &rng, /*observing=*/true);
    }
  } else {
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.base_lr * cfg.lr_factor;
    tc.momentum = cfg.momentum;
    tc.skip_kl_grad = cfg.freeze_elbo_regulariser;
    tc.logger = cfg.logger;
    fit(m, x, y, tc, rng, Mode::Simulated, /*observing=*/true);
  }
  finalise_quantisation(m);
}

/// Per-sample fine-tuning: every snapshot is quantised independently, with
/// its own sites and constants.
template <typename T>
void qat_finetune(SghmcEnsembleT<T>& ens, const TensorT<T>& x,
                  const TensorT<T>& y, const QatConfig& cfg, SeededRng& rng) {
  for (std::size_t l = 0; l < ens.members.size(); ++l) {
    SeededRng member_rng = rng.child(l);
    qat_finetune(ens.members[l], x, y, cfg, member_rng);
  }
}

}  // namespace qbnn
