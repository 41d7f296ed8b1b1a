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
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qbnn/tensor.hpp"

namespace qbnn {

/// One rounding rule everywhere: round half away from zero.
inline double round_half_away(double x) { return std::round(x); }

/// Uniform affine map f = S * (q - Z) for one tensor site.
struct QuantParams {
  double scale = 1.0;
  std::int32_t zero_point = 0;
  int bits = 8;
  bool is_signed = false;

  std::int32_t qmin() const {
    return is_signed ? -(std::int32_t(1) << (bits - 1)) : 0;
  }
  std::int32_t qmax() const {
    return is_signed ? (std::int32_t(1) << (bits - 1)) - 1
                     : (std::int32_t(1) << bits) - 1;
  }
  /// Smallest / largest real value representable without saturation.
  double real_min() const { return scale * (qmin() - zero_point); }
  double real_max() const { return scale * (qmax() - zero_point); }

  bool operator==(const QuantParams&) const = default;
};

/// Running clamping range (a, b), aggregated by exponential moving average.
/// The first observation initialises (a, b) to the tensor's min/max;
/// subsequent ones apply a <- (1-m)a + m*min(t), b <- (1-m)b + m*max(t).
class RangeObserver {
 public:
  explicit RangeObserver(double momentum = 0.01) : momentum_(momentum) {
    if (momentum <= 0.0 || momentum > 1.0) {
      throw std::invalid_argument("RangeObserver: momentum must be in (0, 1]");
    }
  }

  template <typename T>
  void update(const TensorT<T>& t) {
    if (t.empty()) throw std::invalid_argument("RangeObserver: empty tensor");
    const double lo = static_cast<double>(min_element(t));
    const double hi = static_cast<double>(max_element(t));
    if (!initialised_) {
      a_ = lo;
      b_ = hi;
      initialised_ = true;
    } else {
      a_ = (1.0 - momentum_) * a_ + momentum_ * lo;
      b_ = (1.0 - momentum_) * b_ + momentum_ * hi;
    }
  }

  bool initialised() const { return initialised_; }
  double a() const { return a_; }
  double b() const { return b_; }
  double momentum() const { return momentum_; }

  /// Restores observer state (used by checkpoint loading).
  void restore(double a, double b) {
    a_ = a;
    b_ = b;
    initialised_ = true;
  }

 private:
  double a_ = 0.0;
  double b_ = 0.0;
  double momentum_;
  bool initialised_ = false;
};

/// Maps an observed range to (S, Z) for the given width and signedness.
/// The range is widened to include zero, so that real 0 is always exactly
/// representable; a degenerate range (a == b) falls back to S = 1.
inline QuantParams derive_params(const RangeObserver& obs, int bits,
                                 bool is_signed) {
  if (!obs.initialised()) {
    throw std::logic_error("derive_params: observer never updated");
  }
  if (bits < 2 || bits > 8) {
    throw std::invalid_argument("derive_params: bits must be in [2, 8]");
  }
  QuantParams p;
  p.bits = bits;
  p.is_signed = is_signed;
  const double qmin = p.qmin(), qmax = p.qmax();
  if (obs.a() == obs.b()) {
    // Constant tensor: no width to divide by. S = 1 keeps integers exact.
    p.scale = 1.0;
    p.zero_point = static_cast<std::int32_t>(
        std::clamp(round_half_away(-obs.a()), qmin, qmax));
    return p;
  }
  const double a = std::min(obs.a(), 0.0);
  const double b = std::max(obs.b(), 0.0);
  const double levels = static_cast<double>((std::int64_t(1) << bits) - 1);
  p.scale = (b - a) / levels;
  p.zero_point = static_cast<std::int32_t>(
      std::clamp(round_half_away(qmin - a / p.scale), qmin, qmax));
  return p;
}

/// Integer tensor together with the params that decode it.
struct IntTensor {
  std::vector<std::size_t> shape;
  std::vector<std::int32_t> data;
  QuantParams params;

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  std::size_t size() const { return data.size(); }
  std::int32_t& operator()(std::size_t r, std::size_t c) {
    return data[r * cols() + c];
  }
  std::int32_t operator()(std::size_t r, std::size_t c) const {
    return data[r * cols() + c];
  }
};

/// q = clamp(round(f / S) + Z). Out-of-range reals saturate.
template <typename T>
IntTensor quantise(const TensorT<T>& t, const QuantParams& p) {
  IntTensor out;
  out.shape = t.shape();
  out.params = p;
  out.data.resize(t.size());
  const double qmin = p.qmin(), qmax = p.qmax();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double q = round_half_away(static_cast<double>(t[i]) / p.scale) +
                     static_cast<double>(p.zero_point);
    out.data[i] = static_cast<std::int32_t>(std::clamp(q, qmin, qmax));
  }
  return out;
}

/// f = S * (q - Z), computed in double and narrowed to T.
template <typename T = float>
TensorT<T> dequantise(const IntTensor& q) {
  std::vector<T> data(q.data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = static_cast<T>(q.params.scale *
                             (q.data[i] - q.params.zero_point));
  }
  return TensorT<T>::from_data(q.shape, std::move(data));
}

/// Forward pass of a simulated-quantisation node:
/// dequantise(quantise(t)). If ste_mask is given it receives, per element,
/// 1 where the value did not saturate (the straight-through set) and 0
/// where it clamped.
template <typename T>
TensorT<T> fake_quant(const TensorT<T>& t, const QuantParams& p,
                      TensorT<T>* ste_mask = nullptr) {
  TensorT<T> out(t.shape());
  if (ste_mask) *ste_mask = TensorT<T>(t.shape());
  const double qmin = p.qmin(), qmax = p.qmax();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double q = round_half_away(static_cast<double>(t[i]) / p.scale) +
                     static_cast<double>(p.zero_point);
    const double qc = std::clamp(q, qmin, qmax);
    out[i] = static_cast<T>(p.scale * (qc - p.zero_point));
    if (ste_mask) (*ste_mask)[i] = (q >= qmin && q <= qmax) ? T(1) : T(0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed-point realisation of a positive real multiplier < 1, in the style of
// gemmlowp: value = mantissa * 2^(-31 - right_shift) with mantissa in
// [2^30, 2^31). apply() computes round(acc * value) using only integer
// arithmetic.
// ---------------------------------------------------------------------------
struct FixedPointMultiplier {
  std::int32_t mantissa = 0;
  int right_shift = 0;

  double real_value() const {
    return static_cast<double>(mantissa) * std::ldexp(1.0, -31 - right_shift);
  }

  std::int32_t apply(std::int32_t acc) const {
    return rounding_shift_right(
        saturating_rounding_doubling_high_mul(acc, mantissa), right_shift);
  }

  /// round(a * b / 2^31) with saturation at int32 min*min.
  static std::int32_t saturating_rounding_doubling_high_mul(std::int32_t a,
                                                            std::int32_t b) {
    const bool overflow =
        a == b && a == std::numeric_limits<std::int32_t>::min();
    const std::int64_t ab = static_cast<std::int64_t>(a) * b;
    const std::int64_t nudge =
        ab >= 0 ? (std::int64_t(1) << 30) : 1 - (std::int64_t(1) << 30);
    const std::int32_t high =
        static_cast<std::int32_t>((ab + nudge) / (std::int64_t(1) << 31));
    return overflow ? std::numeric_limits<std::int32_t>::max() : high;
  }

  /// round(x / 2^exponent), ties away from zero.
  static std::int32_t rounding_shift_right(std::int32_t x, int exponent) {
    if (exponent == 0) return x;
    const std::int32_t sign = x >= 0 ? 1 : -1;
    const std::int64_t ax = std::abs(static_cast<std::int64_t>(x));
    const std::int64_t mask = (std::int64_t(1) << exponent) - 1;
    const std::int64_t threshold = mask >> 1;
    const std::int64_t r = (ax >> exponent) + ((ax & mask) > threshold ? 1 : 0);
    return static_cast<std::int32_t>(sign * r);
  }
};

/// Encodes 0 < x < 1 as mantissa/shift; reconstruction is within relative
/// 2^-24 of the source (in fact within 2^-30).
inline FixedPointMultiplier fixed_point_from_real(double x) {
  if (!(x > 0.0)) {
    throw std::invalid_argument("fixed_point_from_real: x must be positive");
  }
  if (x >= 1.0) {
    throw std::invalid_argument("fixed_point_from_real: x must be < 1");
  }
  int exponent = 0;
  const double m = std::frexp(x, &exponent);  // x = m * 2^exponent, m in [0.5, 1)
  FixedPointMultiplier fp;
  fp.right_shift = -exponent;
  double mant = round_half_away(std::ldexp(m, 31));
  if (mant >= std::ldexp(1.0, 31)) mant = std::ldexp(1.0, 31) - 1.0;
  fp.mantissa = static_cast<std::int32_t>(mant);
  return fp;
}

}  // namespace qbnn
