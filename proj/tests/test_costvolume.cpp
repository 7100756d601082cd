#include <cmath>

#include "doctest.h"
#include "mgev/cost_volume.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mgev;
using testutil::rand_tensor;

TEST_SUITE_BEGIN("costvolume");

TEST_CASE("all-ones features give unit correlation at d=0") {
  auto f = TensorT<double>::full(Shape{8, 3, 6}, 1.0);
  auto c = group_correlation(f, f, 4, 2);
  // (N_g/N_c) * dot over 4 channels of ones = (2/8)*4 = 1
  for (int64_t g = 0; g < 2; ++g)
    for (int64_t y = 0; y < 3; ++y)
      for (int64_t x = 0; x < 6; ++x)
        CHECK(c.data()[((g * 4 + 0) * 3 + y) * 6 + x] == doctest::Approx(1.0));
}

TEST_CASE("entries left of the border are zero") {
  Rng rng(301);
  auto fl = rand_tensor<double>(rng, Shape{4, 2, 5});
  auto fr = rand_tensor<double>(rng, Shape{4, 2, 5});
  auto c = group_correlation(fl, fr, 5, 2);
  for (int64_t g = 0; g < 2; ++g)
    for (int64_t d = 0; d < 5; ++d)
      for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 0; x < d; ++x)
          CHECK(c.data()[((g * 5 + d) * 2 + y) * 5 + x] == 0.0);
}

TEST_CASE("group correlation matches the loop oracle") {
  Rng rng(307);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t g = 1 + rng.uniform_int(3);
    int64_t cpg = 1 + rng.uniform_int(3);
    int64_t c = g * cpg, h = 2 + rng.uniform_int(3), w = 4 + rng.uniform_int(5);
    int bins = 1 + static_cast<int>(rng.uniform_int(w));
    auto fl = rand_tensor<double>(rng, Shape{c, h, w});
    auto fr = rand_tensor<double>(rng, Shape{c, h, w});
    auto out = group_correlation(fl, fr, bins, static_cast<int>(g));
    auto ref = oracle::group_correlation(fl.values(), fr.values(), c, h, w, bins, g);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::abs(out.data()[i] - ref[static_cast<size_t>(i)]) < 1e-6);
  }
}

TEST_CASE("adaptive patch: all-ones weights on unit features give patch size") {
  auto f = TensorT<double>::full(Shape{8, 2, 24}, 1.0);
  auto w = TensorT<double>::full(Shape{2, 4}, 1.0);
  auto c = adaptive_patch_correlation(f, f, 3, 4, 4, w);
  // interior pixel: 4 taps, each (2/8)*4 = 1
  CHECK(c.data()[(0 * 2 + 0) * 24 + 23] == doctest::Approx(4.0));
}

TEST_CASE("adaptive patch with weight [1,0,0,0] equals stride-4 sampling") {
  Rng rng(311);
  auto fl = rand_tensor<double>(rng, Shape{8, 3, 20});
  auto fr = rand_tensor<double>(rng, Shape{8, 3, 20});
  auto w = TensorT<double>::from(Shape{2, 4}, {1, 0, 0, 0, 1, 0, 0, 0});
  auto apm = adaptive_patch_correlation(fl, fr, 4, 4, 4, w);
  auto full = group_correlation(fl, fr, 16, 2);
  for (int64_t g = 0; g < 2; ++g)
    for (int64_t k = 0; k < 4; ++k)
      for (int64_t i = 0; i < 3 * 20; ++i)
        CHECK(apm.data()[(g * 4 + k) * 60 + i] ==
              doctest::Approx(full.data()[(g * 16 + 4 * k) * 60 + i]).epsilon(1e-12));
}

TEST_CASE("adaptive patch matches the loop oracle") {
  Rng rng(313);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t g = 1 + rng.uniform_int(2);
    int64_t c = g * (1 + rng.uniform_int(3));
    int64_t h = 2 + rng.uniform_int(3), w = 6 + rng.uniform_int(8);
    int stride = rng.bernoulli(0.5) ? 2 : 4;
    int bins = 1 + static_cast<int>(rng.uniform_int(std::max<int64_t>(1, w / stride)));
    auto fl = rand_tensor<double>(rng, Shape{c, h, w});
    auto fr = rand_tensor<double>(rng, Shape{c, h, w});
    auto om = rand_tensor<double>(rng, Shape{g, stride});
    auto out = adaptive_patch_correlation(fl, fr, bins, stride, stride, om);
    auto ref = oracle::adaptive_patch_correlation(fl.values(), fr.values(), c, h, w, bins,
                                                  stride, stride, om.values(), g);
    for (int64_t i = 0; i < out.numel(); ++i)
      CHECK(std::abs(out.data()[i] - ref[static_cast<size_t>(i)]) < 1e-6);
  }
}

TEST_CASE("stride must equal patch and weight shape is checked") {
  Rng rng(317);
  auto f = rand_tensor<double>(rng, Shape{8, 2, 16});
  auto w = TensorT<double>::full(Shape{2, 4}, 0.25);
  CHECK_THROWS_AS(adaptive_patch_correlation(f, f, 4, 2, 4, w), Error);
  auto wbad = TensorT<double>::full(Shape{2, 3}, 0.25);
  CHECK_THROWS_AS(adaptive_patch_correlation(f, f, 4, 4, 4, wbad), Error);
}

TEST_CASE("all-pairs volume is identity for orthonormal columns") {
  int64_t c = 6, h = 2, w = 6;
  auto fl = TensorT<double>::zeros(Shape{c, h, w});
  for (int64_t x = 0; x < w; ++x)
    for (int64_t y = 0; y < h; ++y)
      fl.data()[(x * h + y) * w + x] = std::sqrt(static_cast<double>(c));
  auto pyr = all_pairs_correlation(fl, fl, 1);
  const auto& apc = pyr[0];
  for (int64_t xr = 0; xr < w; ++xr)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        CHECK(apc.data()[(xr * h + y) * w + x] == doctest::Approx(xr == x ? 1.0 : 0.0));
}

TEST_CASE("pooled pyramid level averages adjacent bins") {
  Rng rng(331);
  auto fl = rand_tensor<double>(rng, Shape{4, 2, 8});
  auto fr = rand_tensor<double>(rng, Shape{4, 2, 8});
  auto pyr = all_pairs_correlation(fl, fr, 2);
  REQUIRE(pyr.size() == 2);
  const auto& l0 = pyr[0];
  const auto& l1 = pyr[1];
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t i = 0; i < 2 * 8; ++i)
      CHECK(l1.data()[b * 16 + i] ==
            doctest::Approx(0.5 * (l0.data()[2 * b * 16 + i] + l0.data()[(2 * b + 1) * 16 + i])));
}

TEST_CASE("all-pairs matches the loop oracle") {
  Rng rng(337);
  for (int trial = 0; trial < 10; ++trial) {
    int64_t c = 2 + rng.uniform_int(4), h = 2 + rng.uniform_int(3), w = 4 + rng.uniform_int(5);
    auto fl = rand_tensor<double>(rng, Shape{c, h, w});
    auto fr = rand_tensor<double>(rng, Shape{c, h, w});
    auto pyr = all_pairs_correlation(fl, fr, 1);
    auto ref = oracle::all_pairs(fl.values(), fr.values(), c, h, w);
    for (int64_t i = 0; i < pyr[0].numel(); ++i)
      CHECK(std::abs(pyr[0].data()[i] - ref[static_cast<size_t>(i)]) < 1e-6);
  }
}

TEST_CASE("build_volumes shape arithmetic with full-scale ranges on 64x128") {
  Rng rng(347);
  // quarter-res features of a 64x128 image
  auto fl = rand_tensor<double>(rng, Shape{16, 16, 32});
  auto fr = rand_tensor<double>(rng, Shape{16, 16, 32});
  FeaturePyramid<double> pl, pr;
  pl.f4 = fl;
  pr.f4 = fr;
  RangeSpec spec{192, 384, 768, 8};
  auto om = TensorT<double>::full(Shape{8, 2}, 0.5);
  auto ol = TensorT<double>::full(Shape{8, 4}, 0.25);
  auto vols = build_volumes(pl, pr, spec, om, ol, false);
  CHECK(vols.c_s.shape() == Shape{8, 48, 16, 32});
  CHECK(vols.c_m.shape() == Shape{8, 48, 16, 32});
  CHECK(vols.c_l.shape() == Shape{8, 48, 16, 32});
  REQUIRE(vols.apc.size() == 3);
  CHECK(vols.apc[0].shape() == Shape{32, 16, 32});
  CHECK(vols.apc[1].shape() == Shape{16, 16, 32});
  CHECK(vols.apc[2].shape() == Shape{8, 16, 32});
  // MGEV bin total vs single full-range volume
  CHECK(spec.bins_s() + spec.bins_m() + spec.bins_l() == 144);
  CHECK(spec.d_l / 4 == 192);
}

TEST_CASE("single-range config skips the coarse volumes") {
  Rng rng(349);
  FeaturePyramid<double> pl, pr;
  pl.f4 = rand_tensor<double>(rng, Shape{16, 8, 16});
  pr.f4 = rand_tensor<double>(rng, Shape{16, 8, 16});
  RangeSpec spec{32, 0, 0, 8};
  auto vols = build_volumes(pl, pr, spec, TensorT<double>(), TensorT<double>(), true);
  CHECK(vols.c_s.defined());
  CHECK(!vols.c_m.defined());
  CHECK(!vols.c_l.defined());
}

TEST_CASE("uniform patch weights average consecutive stride-1 correlations") {
  Rng rng(353);
  auto fl = rand_tensor<double>(rng, Shape{8, 3, 24});
  auto fr = rand_tensor<double>(rng, Shape{8, 3, 24});
  auto om = TensorT<double>::full(Shape{2, 4}, 0.25);
  auto cl = adaptive_patch_correlation(fl, fr, 5, 4, 4, om);
  auto fine = group_correlation(fl, fr, 20, 2);
  for (int64_t g = 0; g < 2; ++g)
    for (int64_t k = 0; k < 5; ++k)
      for (int64_t i = 0; i < 3 * 24; ++i) {
        double mean4 = 0;
        for (int64_t j = 0; j < 4; ++j) mean4 += fine.data()[(g * 20 + 4 * k + j) * 72 + i];
        mean4 *= 0.25;
        CHECK(cl.data()[(g * 5 + k) * 72 + i] == doctest::Approx(mean4).epsilon(1e-9));
      }
}

TEST_CASE("patch weight gradients match finite differences") {
  Rng rng(359);
  auto fl = rand_tensor<double>(rng, Shape{4, 2, 12}, -1, 1, true);
  auto fr = rand_tensor<double>(rng, Shape{4, 2, 12}, -1, 1, true);
  auto om = rand_tensor<double>(rng, Shape{2, 2}, 0.1, 0.9, true);
  auto r = rand_tensor<double>(rng, Shape{2, 3, 2, 12});
  CHECK(testutil::fd_max_err(
            rng,
            [&] { return sum(mul(adaptive_patch_correlation(fl, fr, 3, 2, 2, om), r)); },
            {&om, &fl, &fr}) < 1e-4);
}

TEST_SUITE_END();
