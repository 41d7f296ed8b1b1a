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

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "qbnn/quant.hpp"
#include "qbnn/rng.hpp"

using namespace qbnn;

TEST_CASE("range observer") {
  SECTION("first observation sets the range directly") {
    RangeObserver obs(0.1);
    obs.update(Tensor::from_data({2}, {-1.f, 2.f}));
    REQUIRE(obs.a() == -1.0);
    REQUIRE(obs.b() == 2.0);
  }
  SECTION("EMA arithmetic") {
    RangeObserver obs(0.1);
    obs.update(Tensor::from_data({2}, {0.f, 1.f}));
    obs.update(Tensor::from_data({2}, {0.f, 2.f}));
    REQUIRE(obs.a() == Catch::Approx(0.0));
    REQUIRE(obs.b() == Catch::Approx(1.1));
  }
  SECTION("constant stream converges to its min/max") {
    RangeObserver obs(0.2);
    obs.update(Tensor::from_data({2}, {5.f, 9.f}));
    Tensor t = Tensor::from_data({3}, {-3.f, 0.f, 4.f});
    for (int i = 0; i < 200; ++i) obs.update(t);
    REQUIRE(obs.a() == Catch::Approx(-3.0).margin(1e-6));
    REQUIRE(obs.b() == Catch::Approx(4.0).margin(1e-6));
  }
  SECTION("empty tensor rejected") {
    RangeObserver obs;
    REQUIRE_THROWS_AS(obs.update(Tensor()), std::invalid_argument);
  }
}

TEST_CASE("derive_params") {
  SECTION("closed form for [0, 2.55] at 8 bits") {
    RangeObserver obs;
    obs.update(Tensor::from_data({2}, {0.f, 2.55f}));
    QuantParams p = derive_params(obs, 8, false);
    REQUIRE(p.scale == Catch::Approx(0.01).margin(1e-8));
    REQUIRE(p.zero_point == 0);
  }
  SECTION("[-1, 1] at 2 bits: all four levels, zero exact") {
    RangeObserver obs;
    obs.update(Tensor::from_data({2}, {-1.f, 1.f}));
    QuantParams p = derive_params(obs, 2, false);
    REQUIRE(p.scale == Catch::Approx(2.0 / 3.0));
    REQUIRE(p.zero_point == 2);
    bool zero_on_grid = false;
    for (std::int32_t q = p.qmin(); q <= p.qmax(); ++q) {
      const double f = p.scale * (q - p.zero_point);
      if (f == 0.0) zero_on_grid = true;
      REQUIRE(f >= -1.0 - p.scale / 2);
      REQUIRE(f <= 1.0 + p.scale / 2);
    }
    REQUIRE(zero_on_grid);
  }
  SECTION("degenerate constant range") {
    RangeObserver obs;
    obs.update(Tensor::from_data({2}, {5.f, 5.f}));
    QuantParams p = derive_params(obs, 8, false);
    REQUIRE(p.scale == 1.0);
    IntTensor q = quantise(Tensor::from_data({1}, {5.f}), p);
    REQUIRE(dequantise(q)[0] == 5.0f);
  }
  SECTION("positive-only range widens to include zero") {
    RangeObserver obs;
    obs.update(Tensor::from_data({2}, {2.f, 4.f}));
    QuantParams p = derive_params(obs, 8, false);
    REQUIRE(p.zero_point == 0);
    REQUIRE(p.scale == Catch::Approx(4.0 / 255.0));
  }
  SECTION("uninitialised observer rejected") {
    RangeObserver obs;
    REQUIRE_THROWS_AS(derive_params(obs, 8, false), std::logic_error);
  }
}

TEST_CASE("quantise and dequantise") {
  SECTION("real zero maps to the zero point") {
    QuantParams p{.scale = 0.05, .zero_point = 37, .bits = 8, .is_signed = false};
    IntTensor q = quantise(Tensor::from_data({1}, {0.f}), p);
    REQUIRE(q.data[0] == 37);
    REQUIRE(dequantise(q)[0] == 0.0f);
  }
  SECTION("hand arithmetic") {
    QuantParams p{.scale = 0.01, .zero_point = 0, .bits = 8, .is_signed = false};
    IntTensor q = quantise(Tensor::from_data({1}, {1.234f}), p);
    REQUIRE(q.data[0] == 123);

    QuantParams d{.scale = 0.5, .zero_point = 3, .bits = 8, .is_signed = false};
    IntTensor t;
    t.shape = {1};
    t.data = {7};
    t.params = d;
    REQUIRE(dequantise(t)[0] == 2.0f);
  }
  SECTION("roundtrip within S/2 inside the observed range") {
    SeededRng rng(21);
    for (int rep = 0; rep < 50; ++rep) {
      Tensor t({64});
      const float lo = -2.0f + static_cast<float>(rng.next_double());
      const float hi = 0.5f + static_cast<float>(rng.next_double()) * 3.0f;
      for (auto& v : t.data())
        v = lo + static_cast<float>(rng.next_double()) * (hi - lo);
      RangeObserver obs;
      obs.update(t);
      const int bits = 3 + static_cast<int>(rng.next_u64() % 6);
      QuantParams p = derive_params(obs, bits, false);
      Tensor back = dequantise(quantise(t, p));
      for (std::size_t i = 0; i < t.size(); ++i) {
        REQUIRE(std::abs(back[i] - t[i]) <= p.scale / 2 + 1e-6);
      }
    }
  }
  SECTION("quantise is monotone in f") {
    SeededRng rng(22);
    QuantParams p{.scale = 0.037, .zero_point = 11, .bits = 6, .is_signed = false};
    float prev_f = -10.0f;
    std::int32_t prev_q = p.qmin();
    for (int i = 0; i < 1000; ++i) {
      const float f = prev_f + static_cast<float>(rng.next_double()) * 0.05f;
      IntTensor q = quantise(Tensor::from_data({1}, {f}), p);
      REQUIRE(q.data[0] >= prev_q);
      prev_q = q.data[0];
      prev_f = f;
    }
  }
}

TEST_CASE("fake_quant") {
  QuantParams p{.scale = 0.25, .zero_point = 8, .bits = 5, .is_signed = false};
  SECTION("fixed point on the grid") {
    Tensor t = Tensor::from_data({3}, {0.25f, -1.0f, 2.0f});
    Tensor out = fake_quant(t, p);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(out[i] == t[i]);
  }
  SECTION("STE mask is one in range, zero in the clamp region") {
    Tensor t = Tensor::from_data(
        {3}, {0.5f, static_cast<float>(p.real_max() + 1.0),
              static_cast<float>(p.real_min() - 1.0)});
    Tensor mask;
    fake_quant(t, p, &mask);
    REQUIRE(mask[0] == 1.0f);
    REQUIRE(mask[1] == 0.0f);
    REQUIRE(mask[2] == 0.0f);
  }
}

TEST_CASE("fixed point multiplier") {
  SECTION("power of two is exact") {
    FixedPointMultiplier fp = fixed_point_from_real(0.5);
    REQUIRE(fp.real_value() == 0.5);
    REQUIRE(fp.right_shift == 0);
  }
  SECTION("one third within relative 2^-24") {
    FixedPointMultiplier fp = fixed_point_from_real(1.0 / 3.0);
    REQUIRE(std::abs(fp.real_value() - 1.0 / 3.0) / (1.0 / 3.0) <
            std::ldexp(1.0, -24));
  }
  SECTION("0.9999 exercises the shift = 0 branch") {
    FixedPointMultiplier fp = fixed_point_from_real(0.9999);
    REQUIRE(fp.right_shift == 0);
    REQUIRE(std::abs(fp.real_value() - 0.9999) / 0.9999 < std::ldexp(1.0, -24));
  }
  SECTION("domain errors") {
    REQUIRE_THROWS_AS(fixed_point_from_real(0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(fixed_point_from_real(-0.25), std::invalid_argument);
    REQUIRE_THROWS_AS(fixed_point_from_real(1.0), std::invalid_argument);
  }
  SECTION("apply approximates round(acc * x) within one unit") {
    SeededRng rng(23);
    for (int rep = 0; rep < 2000; ++rep) {
      const double x = 0.0001 + rng.next_double() * 0.999;
      const std::int32_t acc =
          static_cast<std::int32_t>(rng.next_u64() % 2000001) - 1000000;
      FixedPointMultiplier fp = fixed_point_from_real(x);
      const double want = round_half_away(static_cast<double>(acc) * x);
      REQUIRE(std::abs(fp.apply(acc) - want) <= 1.0);
    }
  }
}
