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

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

#include "qbnn/tensor.hpp"

namespace qbnn {

/// Deterministic generator: xoshiro256++ seeded through splitmix64.
/// The output sequence is a pure function of the seed, independent of
/// platform or standard-library implementation. Not thread-safe; parallel
/// users derive independent children via child().
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Standard normal draw via Box-Muller; the spare half of each pair is
  /// cached so consecutive calls consume uniforms in a fixed pattern.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent child stream; derivation depends only on this generator's
  /// seed and the stream index, never on how much has been drawn.
  SeededRng child(std::uint64_t stream) const {
    std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    return SeededRng(splitmix64(x));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mask of zeros and ones; each entry is 0 with probability p.
template <typename T = float>
TensorT<T> bernoulli_mask(SeededRng& rng, const std::vector<std::size_t>& shape,
                          double p) {
  if (p < 0.0 || p >= 1.0) {
    throw std::invalid_argument("bernoulli_mask: p must be in [0, 1)");
  }
  TensorT<T> out(shape);
  for (auto& v : out.data()) v = rng.next_double() < p ? T(0) : T(1);
  return out;
}

/// I.i.d. standard normal tensor.
template <typename T = float>
TensorT<T> gaussian_sample(SeededRng& rng, const std::vector<std::size_t>& shape) {
  TensorT<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.next_gaussian());
  return out;
}

}  // namespace qbnn
