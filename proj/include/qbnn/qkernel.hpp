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

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "qbnn/quant.hpp"
#include "qbnn/tensor.hpp"

namespace qbnn {

/// What to do when a 32-bit accumulator would overflow: Trap throws (the
/// test/debug profile), Saturate clamps to the int32 range (the normal
/// profile, matching saturating hardware).
enum class OverflowPolicy { Trap, Saturate };

inline OverflowPolicy default_overflow_policy() {
#ifdef NDEBUG
  return OverflowPolicy::Saturate;
#else
  return OverflowPolicy::Trap;
#endif
}

inline std::int32_t narrow_to_i32(std::int64_t v, OverflowPolicy policy) {
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  if (v < lo || v > hi) {
    if (policy == OverflowPolicy::Trap) {
      throw std::overflow_error("int32 accumulator overflow");
    }
    v = v < lo ? lo : hi;
  }
  return static_cast<std::int32_t>(v);
}

/// Rescale by an arbitrary positive ratio in integer arithmetic. Ratios
/// >= 1 are handled by pre-doubling the accumulator left_shift times and
/// folding the remainder (< 1) into a FixedPointMultiplier.
struct Requantizer {
  int left_shift = 0;
  FixedPointMultiplier fp;

  static Requantizer from_ratio(double ratio) {
    if (!(ratio > 0.0)) {
      throw std::invalid_argument("Requantizer: ratio must be positive");
    }
    Requantizer r;
    while (ratio >= 1.0) {
      ratio /= 2.0;
      ++r.left_shift;
    }
    r.fp = fixed_point_from_real(ratio);
    return r;
  }

  double real_ratio() const {
    return std::ldexp(fp.real_value(), left_shift);
  }

  std::int32_t apply(std::int32_t acc,
                     OverflowPolicy policy = default_overflow_policy()) const {
    const std::int64_t shifted = static_cast<std::int64_t>(acc) << left_shift;
    return fp.apply(narrow_to_i32(shifted, policy));
  }
};

/// Input-independent pieces of the quantised matmul: per-column weight sums,
/// the M*Zw*Zi constant, and the bias requantised onto the accumulator scale
/// Sw*Si (zero offset).
struct OfflineConstants {
  std::vector<std::int32_t> col_sums_w;
  std::int32_t const_term = 0;
  std::vector<std::int32_t> fused_bias;
};

/// Computes OfflineConstants for weights qw (M x F) against an input grid.
/// bias, when present, has one entry per output column and is fused as
/// round(bias / (Sw * Si)).
template <typename T = float>
OfflineConstants precompute_offline(const IntTensor& qw,
                                    const QuantParams& in_params,
                                    const TensorT<T>* bias = nullptr) {
  if (qw.shape.size() != 2) {
    throw std::invalid_argument("precompute_offline: weights must be 2-D");
  }
  const std::size_t M = qw.rows(), F = qw.cols();
  if (bias && bias->size() != F) {
    throw std::invalid_argument("precompute_offline: bias length != columns");
  }
  OfflineConstants off;
  off.col_sums_w.resize(F, 0);
  for (std::size_t c = 0; c < F; ++c) {
    std::int64_t s = 0;
    for (std::size_t m = 0; m < M; ++m) s += qw(m, c);
    off.col_sums_w[c] = narrow_to_i32(s, OverflowPolicy::Trap);
  }
  off.const_term = narrow_to_i32(static_cast<std::int64_t>(M) *
                                     qw.params.zero_point * in_params.zero_point,
                                 OverflowPolicy::Trap);
  off.fused_bias.resize(F, 0);
  if (bias) {
    const double acc_scale = qw.params.scale * in_params.scale;
    for (std::size_t c = 0; c < F; ++c) {
      const double fb = round_half_away(static_cast<double>((*bias)[c]) / acc_scale);
      if (std::abs(fb) > static_cast<double>(std::numeric_limits<std::int32_t>::max())) {
        throw std::overflow_error("precompute_offline: bias exceeds accumulator scale");
      }
      off.fused_bias[c] = static_cast<std::int32_t>(fb);
    }
  }
  return off;
}

inline OfflineConstants precompute_offline(const IntTensor& qw,
                                           const QuantParams& in_params) {
  return precompute_offline(qw, in_params,
                            static_cast<const TensorT<float>*>(nullptr));
}

struct QMatmulOptions {
  OverflowPolicy overflow = default_overflow_policy();
  /// Debug mode: requantise with the real multiplier Sw*Si/So instead of the
  /// fixed-point one, for exact comparison against the float path.
  bool use_real_multiplier = false;
};

/// Integer-only linear layer:
///   q_o = Z_o + requant(M*Zw*Zi - Zi*col_sum(q_w) - Zw*row_sum(q_i)
///                       + q_w.q_i + fused_bias)
/// where requant realises Sw*Si/So and the result saturates to the output
/// range. The row sums are the only input-dependent correction; everything
/// else comes precomputed in OfflineConstants.
inline IntTensor quantised_matmul(const IntTensor& qi, const IntTensor& qw,
                                  const OfflineConstants& off,
                                  const Requantizer& mult,
                                  const QuantParams& out_params,
                                  const QMatmulOptions& opts = {}) {
  if (qi.shape.size() != 2 || qw.shape.size() != 2 || qi.cols() != qw.rows()) {
    throw std::invalid_argument("quantised_matmul: shapes do not conform");
  }
  if (off.col_sums_w.size() != qw.cols() || off.fused_bias.size() != qw.cols()) {
    throw std::invalid_argument("quantised_matmul: offline constants mismatch");
  }
  const std::size_t I = qi.rows(), M = qi.cols(), F = qw.cols();
  const std::int32_t Zw = qw.params.zero_point;
  const std::int32_t Zi = qi.params.zero_point;
  const double real_mult =
      qw.params.scale * qi.params.scale / out_params.scale;

  IntTensor out;
  out.shape = {I, F};
  out.params = out_params;
  out.data.resize(I * F);

  std::vector<std::int64_t> row_sums(I, 0);
  for (std::size_t r = 0; r < I; ++r) {
    std::int64_t s = 0;
    for (std::size_t m = 0; m < M; ++m) s += qi(r, m);
    row_sums[r] = s;
  }

  const std::int32_t qlo = out_params.qmin(), qhi = out_params.qmax();
  for (std::size_t r = 0; r < I; ++r) {
    for (std::size_t c = 0; c < F; ++c) {
      std::int64_t acc = 0;
      for (std::size_t m = 0; m < M; ++m) {
        acc += static_cast<std::int64_t>(qi(r, m)) * qw(m, c);
      }
      acc += static_cast<std::int64_t>(off.const_term) -
             static_cast<std::int64_t>(Zi) * off.col_sums_w[c] -
             static_cast<std::int64_t>(Zw) * row_sums[r] +
             off.fused_bias[c];
      const std::int32_t acc32 = narrow_to_i32(acc, opts.overflow);
      std::int64_t q;
      if (opts.use_real_multiplier) {
        q = static_cast<std::int64_t>(round_half_away(acc32 * real_mult));
      } else {
        q = mult.apply(acc32, opts.overflow);
      }
      q += out_params.zero_point;
      out(r, c) = static_cast<std::int32_t>(
          std::clamp<std::int64_t>(q, qlo, qhi));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Element-wise integer ops used by the Bayesian layers.
// ---------------------------------------------------------------------------

/// Rescales src onto dst's grid with an extra real factor:
/// dst_value = src_value * extra_scale.
inline IntTensor requantise_elementwise(const IntTensor& src, double extra_scale,
                                        const QuantParams& dst,
                                        OverflowPolicy policy = default_overflow_policy()) {
  const Requantizer rq =
      Requantizer::from_ratio(src.params.scale * extra_scale / dst.scale);
  IntTensor out;
  out.shape = src.shape;
  out.params = dst;
  out.data.resize(src.data.size());
  const std::int32_t qlo = dst.qmin(), qhi = dst.qmax();
  for (std::size_t i = 0; i < src.data.size(); ++i) {
    const std::int32_t d = src.data[i] - src.params.zero_point;
    const std::int64_t q =
        static_cast<std::int64_t>(rq.apply(d, policy)) + dst.zero_point;
    out.data[i] = static_cast<std::int32_t>(std::clamp<std::int64_t>(q, qlo, qhi));
  }
  return out;
}

/// Element-wise product of two quantised tensors onto dst's grid.
inline IntTensor mul_quantised(const IntTensor& a, const IntTensor& b,
                               const QuantParams& dst,
                               OverflowPolicy policy = default_overflow_policy()) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("mul_quantised: shape mismatch");
  }
  const Requantizer rq =
      Requantizer::from_ratio(a.params.scale * b.params.scale / dst.scale);
  IntTensor out;
  out.shape = a.shape;
  out.params = dst;
  out.data.resize(a.data.size());
  const std::int32_t qlo = dst.qmin(), qhi = dst.qmax();
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const std::int64_t prod =
        static_cast<std::int64_t>(a.data[i] - a.params.zero_point) *
        (b.data[i] - b.params.zero_point);
    const std::int64_t q =
        static_cast<std::int64_t>(rq.apply(narrow_to_i32(prod, policy), policy)) +
        dst.zero_point;
    out.data[i] = static_cast<std::int32_t>(std::clamp<std::int64_t>(q, qlo, qhi));
  }
  return out;
}

/// Element-wise sum of two quantised tensors onto dst's grid. Both addends
/// are first rescaled onto an amplified common grid (dst scale / 2^16) so
/// the final rounding is effectively single, mirroring one simulated-
/// quantisation node on the sum.
inline IntTensor add_quantised(const IntTensor& a, const IntTensor& b,
                               const QuantParams& dst,
                               OverflowPolicy policy = default_overflow_policy()) {
  if (a.shape != b.shape) {
    throw std::invalid_argument("add_quantised: shape mismatch");
  }
  constexpr int kAmpBits = 16;
  const double amp = std::ldexp(1.0, kAmpBits);
  const Requantizer ra = Requantizer::from_ratio(a.params.scale * amp / dst.scale);
  const Requantizer rb = Requantizer::from_ratio(b.params.scale * amp / dst.scale);
  IntTensor out;
  out.shape = a.shape;
  out.params = dst;
  out.data.resize(a.data.size());
  const std::int32_t qlo = dst.qmin(), qhi = dst.qmax();
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const std::int64_t sum =
        static_cast<std::int64_t>(ra.apply(a.data[i] - a.params.zero_point, policy)) +
        rb.apply(b.data[i] - b.params.zero_point, policy);
    const std::int64_t q =
        FixedPointMultiplier::rounding_shift_right(narrow_to_i32(sum, policy),
                                                   kAmpBits) +
        dst.zero_point;
    out.data[i] = static_cast<std::int32_t>(std::clamp<std::int64_t>(q, qlo, qhi));
  }
  return out;
}

/// im2col for integer tensors; same lowering as the float version.
inline IntTensor im2col_q(const IntTensor& in, std::size_t kh, std::size_t kw) {
  if (in.shape.size() != 4) throw std::invalid_argument("im2col_q: expected {N,C,H,W}");
  const std::size_t N = in.shape[0], C = in.shape[1], H = in.shape[2],
                    W = in.shape[3];
  if (kh > H || kw > W) throw std::invalid_argument("im2col_q: kernel larger than input");
  const std::size_t OH = H - kh + 1, OW = W - kw + 1;
  IntTensor out;
  out.shape = {N * OH * OW, C * kh * kw};
  out.params = in.params;
  out.data.resize(out.shape[0] * out.shape[1]);
  std::size_t row = 0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox, ++row) {
        std::size_t col = 0;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++col) {
              out(row, col) = in.data[((n * C + c) * H + oy + ky) * W + ox + kx];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Valid stride-1 quantised convolution via im2col + quantised_matmul.
/// qkernel has shape {K, C, KH, KW}; offline constants are computed against
/// the kernel laid out as a {C*KH*KW, K} matrix.
inline IntTensor quantised_conv2d(const IntTensor& qin, const IntTensor& qkernel,
                                  const OfflineConstants& off,
                                  const Requantizer& mult,
                                  const QuantParams& out_params,
                                  const QMatmulOptions& opts = {}) {
  if (qkernel.shape.size() != 4) {
    throw std::invalid_argument("quantised_conv2d: expected kernel {K,C,KH,KW}");
  }
  const std::size_t K = qkernel.shape[0], C = qkernel.shape[1],
                    KH = qkernel.shape[2], KW = qkernel.shape[3];
  if (qin.shape.size() != 4 || qin.shape[1] != C) {
    throw std::invalid_argument("quantised_conv2d: input/kernel channel mismatch");
  }
  const std::size_t N = qin.shape[0], H = qin.shape[2], W = qin.shape[3];
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  IntTensor patches = im2col_q(qin, KH, KW);
  IntTensor wmat;
  wmat.shape = {C * KH * KW, K};
  wmat.params = qkernel.params;
  wmat.data.resize(wmat.shape[0] * wmat.shape[1]);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < C * KH * KW; ++i)
      wmat(i, k) = qkernel.data[k * C * KH * KW + i];
  IntTensor flat = quantised_matmul(patches, wmat, off, mult, out_params, opts);
  IntTensor out;
  out.shape = {N, K, OH, OW};
  out.params = out_params;
  out.data.resize(N * K * OH * OW);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < OH * OW; ++p)
        out.data[((n * K + k) * OH * OW) + p] = flat((n * OH * OW) + p, k);
  return out;
}

}  // namespace qbnn
