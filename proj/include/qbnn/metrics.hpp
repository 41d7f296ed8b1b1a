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
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qbnn/tensor.hpp"

namespace qbnn {

constexpr double kVarianceFloor = 1e-6;
constexpr double kLogFloor = 1e-12;

template <typename T>
double rmse(const TensorT<T>& preds, const TensorT<T>& targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw std::invalid_argument("rmse: empty or mismatched inputs");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = static_cast<double>(preds[i]) - targets[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(preds.size()));
}

/// Mean Gaussian negative log likelihood:
///   log(sigma^2)/2 + (y - mu)^2 / (2 sigma^2) + log sqrt(2 pi),
/// with the variance floored at 1e-6.
template <typename T>
double nll_regression(const TensorT<T>& mean, const TensorT<T>& variance,
                      const TensorT<T>& targets) {
  if (mean.size() != targets.size() || mean.size() != variance.size() ||
      mean.empty()) {
    throw std::invalid_argument("nll_regression: mismatched inputs");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double var = std::max(static_cast<double>(variance[i]), kVarianceFloor);
    const double r = static_cast<double>(targets[i]) - mean[i];
    acc += 0.5 * std::log(var) + r * r / (2.0 * var);
  }
  return acc / static_cast<double>(mean.size()) +
         std::log(std::sqrt(2.0 * std::numbers::pi));
}

/// Cross-entropy against one-hot targets, log floored at 1e-12. Rows of
/// probs must sum to 1 within 1e-4.
template <typename T>
double nll_classification(const TensorT<T>& probs, const TensorT<T>& one_hot) {
  check_same_shape(probs, one_hot, "nll_classification");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    double rowsum = 0.0;
    double onehot_sum = 0.0;
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      rowsum += probs(i, k);
      const double y = one_hot(i, k);
      if (y != 0.0 && y != 1.0) {
        throw std::invalid_argument("nll_classification: targets must be one-hot");
      }
      onehot_sum += y;
      if (y > 0.0) {
        acc -= std::log(std::max(static_cast<double>(probs(i, k)), kLogFloor));
      }
    }
    if (std::abs(rowsum - 1.0) > 1e-4) {
      throw std::invalid_argument("nll_classification: rows must sum to 1");
    }
    if (onehot_sum != 1.0) {
      throw std::invalid_argument("nll_classification: targets must be one-hot");
    }
  }
  return acc / static_cast<double>(probs.rows());
}

/// Average predictive entropy in nats; 0 * log 0 counts as 0.
template <typename T>
double avg_predictive_entropy(const TensorT<T>& probs) {
  if (probs.rank() != 2 || probs.empty()) {
    throw std::invalid_argument("avg_predictive_entropy: need I x K probabilities");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p > 0.0) acc -= p * std::log(p);
  }
  return acc / static_cast<double>(probs.rows());
}

/// Argmax with ties broken toward the lowest class index.
template <typename T>
std::size_t argmax_row(const TensorT<T>& probs, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.cols(); ++k) {
    if (probs(row, k) > probs(row, best)) best = k;
  }
  return best;
}

template <typename T>
double classification_error(const TensorT<T>& probs,
                            const std::vector<std::size_t>& labels) {
  if (probs.rows() != labels.size() || probs.empty()) {
    throw std::invalid_argument("classification_error: mismatched inputs");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    wrong += argmax_row(probs, i) != labels[i];
  }
  return static_cast<double>(wrong) / static_cast<double>(probs.rows());
}

/// Equal-width confidence bins over (0, 1]: confidence c lands in bin
/// ceil(c * B), with c = 0 in bin 1.
struct CalibrationBins {
  std::size_t num_bins = 10;
  std::vector<std::size_t> count;
  std::vector<double> accuracy;    // fraction correct per occupied bin
  std::vector<double> confidence;  // mean max-probability per occupied bin
};

template <typename T>
CalibrationBins calibration_bins(const TensorT<T>& probs,
                                 const std::vector<std::size_t>& labels,
                                 std::size_t num_bins = 10) {
  if (num_bins < 1) throw std::invalid_argument("calibration_bins: B >= 1");
  if (probs.rows() != labels.size() || probs.empty()) {
    throw std::invalid_argument("calibration_bins: mismatched inputs");
  }
  CalibrationBins bins;
  bins.num_bins = num_bins;
  bins.count.assign(num_bins, 0);
  bins.accuracy.assign(num_bins, 0.0);
  bins.confidence.assign(num_bins, 0.0);
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const std::size_t pred = argmax_row(probs, i);
    const double conf = probs(i, pred);
    std::size_t b = static_cast<std::size_t>(
        std::ceil(conf * static_cast<double>(num_bins)));
    if (b < 1) b = 1;
    if (b > num_bins) b = num_bins;
    --b;
    bins.count[b] += 1;
    bins.accuracy[b] += pred == labels[i] ? 1.0 : 0.0;
    bins.confidence[b] += conf;
  }
  for (std::size_t b = 0; b < num_bins; ++b) {
    if (bins.count[b] > 0) {
      bins.accuracy[b] /= static_cast<double>(bins.count[b]);
      bins.confidence[b] /= static_cast<double>(bins.count[b]);
    }
  }
  return bins;
}

/// ECE = sum_b (n_b / N) |accuracy(b) - confidence(b)|.
template <typename T>
double ece(const TensorT<T>& probs, const std::vector<std::size_t>& labels,
           std::size_t num_bins = 10) {
  const CalibrationBins bins = calibration_bins(probs, labels, num_bins);
  const double n = static_cast<double>(probs.rows());
  double acc = 0.0;
  for (std::size_t b = 0; b < bins.num_bins; ++b) {
    if (bins.count[b] > 0) {
      acc += (static_cast<double>(bins.count[b]) / n) *
             std::abs(bins.accuracy[b] - bins.confidence[b]);
    }
  }
  return acc;
}

/// Per-task metric bundle; absent metrics stay unset.
struct MetricsReport {
  std::optional<double> rmse;
  std::optional<double> nll;
  std::optional<double> ape;
  std::optional<double> ece;
  std::optional<double> classification_error;
};

}  // namespace qbnn
