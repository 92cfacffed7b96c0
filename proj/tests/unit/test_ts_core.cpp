#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "counts/error.hpp"
#include "counts/ts_core.hpp"

using namespace counts;
using namespace counts::ts;

namespace {

// Reference rounding of log2 with ties toward +inf, done in long double.
// sqrt(2) is irrational, so no double sits on a threshold and the extra
// precision decides every comparison correctly.
int reference_scale(double peak) {
  if (peak == 0.0 || !std::isnormal(peak)) return kMinScaleExp;
  const int lo = static_cast<int>(std::floor(std::log2(static_cast<long double>(peak))));
  int k = lo;
  for (int c = lo - 1; c <= lo + 1; ++c) {
    if (static_cast<long double>(peak) >= std::ldexp(std::sqrt(2.0L), c)) k = c + 1;
  }
  if (k > lo + 1) k = lo + 1;
  return std::clamp(k, kMinScaleExp, kMaxScaleExp);
}

}  // namespace

TEST_CASE("compute_scale on hand-picked values") {
  std::vector<double> x(kPatchLength, 0.0);
  x[3] = 1.0;
  CHECK(compute_scale(x) == 0);
  x[3] = -1.5;  // log2 1.5 = 0.585
  CHECK(compute_scale(x) == 1);
  x[3] = 1.4142135623730950;  // just below sqrt(2)
  CHECK(compute_scale(x) == 0);
  x[3] = 1.4142135623730951;  // just above
  CHECK(compute_scale(x) == 1);
  x[3] = 1000.0;  // log2 = 9.97
  CHECK(compute_scale(x) == 10);
  x[3] = 0.3;  // log2 = -1.74
  CHECK(compute_scale(x) == -2);
}

TEST_CASE("compute_scale clamps and handles zero") {
  std::vector<double> x(kPatchLength, 0.0);
  CHECK(compute_scale(x) == kMinScaleExp);
  x[0] = std::numeric_limits<double>::denorm_min();
  CHECK(compute_scale(x) == kMinScaleExp);
  x[0] = 1e-20;
  CHECK(compute_scale(x) == -10);
  x[0] = 1e20;
  CHECK(compute_scale(x) == 36);
  x[0] = std::ldexp(1.0, 36);
  CHECK(compute_scale(x) == 36);
  x[0] = std::ldexp(1.0, -10);
  CHECK(compute_scale(x) == -10);
  x[0] = std::nan("");
  CHECK_THROWS_AS(compute_scale(x), Error);
}

TEST_CASE("compute_scale agrees with a long-double reference") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> expo(-40.0, 45.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 20000; ++trial) {
    std::vector<double> x(kPatchLength);
    const double s = std::exp2(expo(rng));
    double peak = 0.0;
    for (auto& v : x) {
      v = u(rng) * s;
      peak = std::max(peak, std::abs(v));
    }
    REQUIRE(compute_scale(x) == reference_scale(peak));
  }
}

TEST_CASE("scaling is a bit-exact round trip and normalises the peak") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> expo(-9.0, 35.0);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> x(kPatchLength);
    const double s = std::exp2(expo(rng));
    for (auto& v : x) v = n(rng) * s;
    const Patch p = make_patch(x);
    double peak = 0.0;
    for (double v : p.scaled) peak = std::max(peak, std::abs(v));
    if (p.scale_exp > kMinScaleExp && p.scale_exp < kMaxScaleExp) {
      CHECK(peak >= std::sqrt(0.5));
      CHECK(peak < std::sqrt(2.0));
    }
    const auto back = unscale(p.scaled, p.scale_exp);
    for (std::size_t i = 0; i < kPatchLength; ++i) REQUIRE(back[i] == x[i]);
  }
}

TEST_CASE("patchify pads the tail and join_patches undoes it") {
  std::vector<double> v(130);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i) - 40.0;
  const auto patches = patchify(v);
  REQUIRE(patches.size() == 3);
  CHECK(patch_count(130) == 3);
  CHECK(pad_count(130) == 62);
  CHECK(pad_count(128) == 0);
  CHECK(patches[2].samples[1] == 129.0 - 40.0);
  CHECK(patches[2].samples[2] == 0.0);
  CHECK(join_patches(patches, v.size()) == v);

  const auto padded = patchify(v, -7.0);
  CHECK(padded[2].samples[63] == -7.0);
  CHECK_THROWS_AS(join_patches(patches, 200), Error);
}

TEST_CASE("validate rejects empty and non-finite series") {
  Series s{"x", {}, {}};
  CHECK_THROWS_AS(validate(s), Error);
  s.values = {1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_WITH_AS(validate(s), doctest::Contains("index 1"), Error);
  s.values = {1.0, 2.0};
  CHECK_NOTHROW(validate(s));
  CHECK_THROWS_AS(patchify(std::vector<double>{}), Error);
}
