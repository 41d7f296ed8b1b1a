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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qbnn {

/// Dense row-major N-dimensional tensor. Immutable-by-convention value type:
/// operations return new tensors instead of mutating inputs.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static TensorT from_data(std::vector<std::size_t> shape, std::vector<T> data) {
    if (count(shape) != data.size()) {
      throw std::invalid_argument("tensor shape does not match data length: " +
                                  std::to_string(count(shape)) + " vs " +
                                  std::to_string(data.size()));
    }
    TensorT t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return dim2(0); }
  std::size_t cols() const { return dim2(1); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  TensorT reshaped(std::vector<std::size_t> shape) const {
    return from_data(std::move(shape), data_);
  }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  std::size_t dim2(std::size_t i) const {
    if (shape_.size() != 2) throw std::logic_error("tensor is not 2-D");
    return shape_[i];
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

template <typename T>
TensorT<T> identity(std::size_t n) {
  TensorT<T> t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
  return t;
}

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  std::vector<To> data(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<To>(t[i]);
  return TensorT<To>::from_data(t.shape(), std::move(data));
}

/// a (I x M) times b (M x F). Each output element accumulates in double.
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: shapes do not conform");
  }
  const std::size_t I = a.rows(), M = a.cols(), F = b.cols();
  TensorT<T> out({I, F});
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t f = 0; f < F; ++f) {
      double acc = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        acc += static_cast<double>(a(i, m)) * static_cast<double>(b(m, f));
      }
      out(i, f) = static_cast<T>(acc);
    }
  }
  return out;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: 2-D only");
  TensorT<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& t) {
  TensorT<T> out = t;
  for (auto& v : out.data()) v = std::max(v, T(0));
  return out;
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
template <typename T>
TensorT<T> softmax_rows(const TensorT<T>& t) {
  if (t.rank() != 2) throw std::invalid_argument("softmax_rows: 2-D only");
  TensorT<T> out({t.rows(), t.cols()});
  for (std::size_t i = 0; i < t.rows(); ++i) {
    T mx = t(i, 0);
    for (std::size_t k = 1; k < t.cols(); ++k) mx = std::max(mx, t(i, k));
    double sum = 0.0;
    for (std::size_t k = 0; k < t.cols(); ++k) {
      const double e = std::exp(static_cast<double>(t(i, k) - mx));
      out(i, k) = static_cast<T>(e);
      sum += e;
    }
    for (std::size_t k = 0; k < t.cols(); ++k) {
      out(i, k) = static_cast<T>(static_cast<double>(out(i, k)) / sum);
    }
  }
  return out;
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "add");
  TensorT<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "sub");
  TensorT<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
TensorT<T> hadamard(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "hadamard");
  TensorT<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, T s) {
  TensorT<T> out = a;
  for (auto& v : out.data()) v *= s;
  return out;
}

/// Adds a length-F row vector to every row of a (I x F).
template <typename T>
TensorT<T> add_row_broadcast(const TensorT<T>& a, const TensorT<T>& row) {
  if (a.rank() != 2 || row.size() != a.cols()) {
    throw std::invalid_argument("add_row_broadcast: shape mismatch");
  }
  TensorT<T> out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += row[j];
  return out;
}

template <typename T>
T min_element(const TensorT<T>& t) {
  if (t.empty()) throw std::invalid_argument("min_element: empty tensor");
  return *std::min_element(t.data().begin(), t.data().end());
}

template <typename T>
T max_element(const TensorT<T>& t) {
  if (t.empty()) throw std::invalid_argument("max_element: empty tensor");
  return *std::max_element(t.data().begin(), t.data().end());
}

/// Lowers a {N, C, H, W} input to the {N*OH*OW, C*KH*KW} patch matrix of a
/// valid (unpadded) stride-1 convolution, so conv reduces to matmul.
template <typename T>
TensorT<T> im2col(const TensorT<T>& in, std::size_t kh, std::size_t kw) {
  if (in.rank() != 4) throw std::invalid_argument("im2col: expected {N,C,H,W}");
  const std::size_t N = in.shape()[0], C = in.shape()[1], H = in.shape()[2],
                    W = in.shape()[3];
  if (kh > H || kw > W) throw std::invalid_argument("im2col: kernel larger than input");
  const std::size_t OH = H - kh + 1, OW = W - kw + 1;
  TensorT<T> out({N * OH * OW, C * kh * kw});
  std::size_t row = 0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox, ++row) {
        std::size_t col = 0;
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx, ++col) {
              out(row, col) = in[((n * C + c) * H + oy + ky) * W + ox + kx];
            }
          }
        }
      }
    }
  }
  return out;
}

/// Valid stride-1 convolution of {N,C,H,W} with kernels {K,C,KH,KW},
/// lowered through im2col + matmul.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& in, const TensorT<T>& kernel) {
  if (kernel.rank() != 4) throw std::invalid_argument("conv2d: expected kernel {K,C,KH,KW}");
  const std::size_t K = kernel.shape()[0], C = kernel.shape()[1],
                    KH = kernel.shape()[2], KW = kernel.shape()[3];
  if (in.rank() != 4 || in.shape()[1] != C) {
    throw std::invalid_argument("conv2d: input/kernel channel mismatch");
  }
  const std::size_t N = in.shape()[0], H = in.shape()[2], W = in.shape()[3];
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  TensorT<T> patches = im2col(in, KH, KW);
  TensorT<T> wmat({C * KH * KW, K});
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < C * KH * KW; ++i) wmat(i, k) = kernel[k * C * KH * KW + i];
  TensorT<T> flat = matmul(patches, wmat);  // {N*OH*OW, K}
  TensorT<T> out({N, K, OH, OW});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < OH * OW; ++p)
        out[((n * K + k) * OH * OW) + p] = flat((n * OH * OW) + p, k);
  return out;
}

}  // namespace qbnn
