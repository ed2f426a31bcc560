#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "transfusion/preprocess.hpp"

using namespace transfusion;
using namespace transfusion::prep;

namespace {

HampelResult run(const std::vector<double>& x, std::size_t k, SigmaMode mode = SigmaMode::mad) {
  return hampel_filter(x, HampelOptions{k, 3.0, mode});
}

// Smooth signal with sparse large spikes.
std::vector<double> spiky_corpus(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> noise(0.0, 0.05);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  const double f = 0.02 + 0.1 * u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = 2.0 + std::sin(f * static_cast<double>(i)) + noise(rng);
    if (u(rng) < 0.03) x[i] += (u(rng) < 0.5 ? -1 : 1) * (4.0 + 6.0 * u(rng));
  }
  return x;
}

}  // namespace

TEST_CASE("hampel examples") {
  auto r = run({1, 1, 1, 100, 1, 1, 1}, 3);
  CHECK(r.filtered == std::vector<double>(7, 1.0));
  CHECK(r.outlier_count() == 1);
  CHECK(r.outliers[3]);

  auto brute = oracle::hampel_brute_force({1, 1, 1, 100, 1, 1, 1}, 3, 3.0);
  CHECK(brute.filtered == r.filtered);
  CHECK(brute.mask == r.outliers);

  auto c = run(std::vector<double>(9, 4.2), 2);
  CHECK(c.filtered == std::vector<double>(9, 4.2));
  CHECK(c.outlier_count() == 0);

  std::vector<double> ramp(10);
  std::iota(ramp.begin(), ramp.end(), 1.0);
  auto rr = run(ramp, 2);
  CHECK(rr.filtered == ramp);
  CHECK(rr.outlier_count() == 0);
  CHECK(oracle::hampel_brute_force(ramp, 2, 3.0).mask == rr.outliers);

  CHECK_THROWS_AS(run({1, 2, 3}, 0), ConfigError);
  CHECK_THROWS_AS(run({}, 2), ShapeError);
  CHECK_THROWS_AS(hampel_filter(ramp, HampelOptions{2, 0.0}), ConfigError);
}

TEST_CASE("hampel sample-std mode") {
  // One spike of 100 among six ones: the in-window std is inflated by the
  // spike itself and the 3-sigma test does not fire.
  auto r = run({1, 1, 1, 100, 1, 1, 1}, 3, SigmaMode::sample_std);
  CHECK(r.outlier_count() == 0);
  CHECK(parse_sigma_mode("std") == SigmaMode::sample_std);
  CHECK(parse_sigma_mode("mad") == SigmaMode::mad);
  CHECK_THROWS_AS(parse_sigma_mode("iqr"), ConfigError);
}

TEST_CASE("hampel matches the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 80, k = 1 + rng() % 6;
    auto x = spiky_corpus(rng, n);
    auto got = run(x, k);
    auto want = oracle::hampel_brute_force(x, k, 3.0);
    CHECK(got.filtered == want.filtered);
    CHECK(got.outliers == want.mask);
  }
}

TEST_CASE("hampel properties") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 1 + rng() % 6;
    auto x = spiky_corpus(rng, 200);
    auto once = run(x, k);

    std::size_t changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (once.filtered[i] != x[i]) {
        ++changed;
        std::vector<double> w(x.begin() + static_cast<long>(i >= k ? i - k : 0),
                              x.begin() + static_cast<long>(std::min(x.size(), i + k + 1)));
        CHECK(once.filtered[i] == oracle::sorted_median(w));
      }
    }
    CHECK(changed == once.outlier_count());

    auto twice = run(once.filtered, k);
    if (twice.outlier_count() == 0) CHECK(twice.filtered == once.filtered);
  }
}

TEST_CASE("hampel is idempotent on spike corpora") {
  // Isolated spikes on a slow sine: the second pass finds nothing new.
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(300);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 3.0 + std::sin(0.05 * static_cast<double>(i));
    for (int s = 0; s < 6; ++s) x[20 + rng() % 260] += 10.0;
    auto once = run(x, 5);
    auto twice = run(once.filtered, 5);
    CHECK(twice.filtered == once.filtered);
  }
}

TEST_CASE("hampel_columns filters each column independently") {
  std::mt19937_64 rng(14);
  const std::size_t n = 60, d = 4;
  std::vector<std::vector<double>> cols(d);
  std::vector<double> flat(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    cols[j] = spiky_corpus(rng, n);
    for (std::size_t i = 0; i < n; ++i) flat[i * d + j] = cols[j][i];
  }
  std::vector<bool> mask;
  auto out = hampel_columns(Tensor::from({n, d}, flat), HampelOptions{}, &mask);
  for (std::size_t j = 0; j < d; ++j) {
    auto want = oracle::hampel_brute_force(cols[j], 5, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(out.at(i, j) == want.filtered[i]);
      CHECK(mask[i * d + j] == want.mask[i]);
    }
  }
}

TEST_CASE("resample_window") {
  RawCsiWindow w{Tensor::from({4, 1}, {0, 2, 4, 6})};
  CHECK(resample_window(w, 2, ResampleMethod::mean_pool).to_vector() == std::vector<double>{1, 5});
  CHECK(resample_window(w, 4, ResampleMethod::mean_pool).to_vector() == w.packets.to_vector());
  CHECK(resample_window(w, 4, ResampleMethod::stride).to_vector() == w.packets.to_vector());

  RawCsiWindow s{Tensor::from({6, 1}, {0, 1, 2, 3, 4, 5})};
  CHECK(resample_window(s, 3, ResampleMethod::stride).to_vector() == std::vector<double>{0, 2, 4});
  CHECK_THROWS_AS(resample_window(s, 7, ResampleMethod::stride), ShapeError);

  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t l = 1 + rng() % 10, bin = 1 + rng() % 8, d = 1 + rng() % 3;
    auto packets = oracle::random_tensor({l * bin, d}, rng, 0, 5);
    auto y = resample_window(RawCsiWindow{packets}, l, ResampleMethod::mean_pool);
    CHECK(y.shape() == Shape{l, d});
    for (std::size_t j = 0; j < d; ++j) {
      double a = 0, b = 0;
      for (std::size_t i = 0; i < l * bin; ++i) a += packets.at(i, j);
      for (std::size_t i = 0; i < l; ++i) b += y.at(i, j);
      CHECK(std::fabs(a / static_cast<double>(l * bin) - b / static_cast<double>(l)) < 1e-9);
    }
  }

  SUBCASE("2000 packets to 100 steps") {
    auto packets = oracle::random_tensor({2000, 3}, rng, 0, 1);
    RawCsiWindow raw{packets, 500.0, 4.0};
    auto y = resample_window(raw, 100, ResampleMethod::mean_pool);
    CHECK(y.shape() == Shape{100, 3});
    double m = 0;
    for (std::size_t i = 0; i < 20; ++i) m += packets.at(i + 20, 1);
    CHECK(y.at(1, 1) == doctest::Approx(m / 20).epsilon(1e-12));
  }
}

TEST_CASE("patchify") {
  std::mt19937_64 rng(16);
  auto img = oracle::random_tensor({8, 8, 2}, rng, 0, 1);
  auto single = patchify(img, 8);
  CHECK(single.shape() == Shape{1, 128});
  CHECK(single.to_vector() == img.to_vector());

  auto big = oracle::random_tensor({64, 64, 3}, rng, 0, 1);
  auto p = patchify(big, 16);
  CHECK(p.shape() == Shape{16, 768});
  CHECK(unpatchify(p, 64, 64, 3, 16).to_vector() == big.to_vector());

  // Patch 5 is grid row 1, column 1; its element (y=2, x=3, c=1).
  CHECK(p.at(5, (2 * 16 + 3) * 3 + 1) == big.at(((16 + 2) * 64 + 16 + 3) * 3 + 1));

  CHECK_THROWS_AS(patchify(big, 15), ShapeError);
  CHECK_THROWS_AS(unpatchify(p, 64, 64, 3, 8), ShapeError);

  auto z = unpatchify(Tensor::zeros({4, 16}), 8, 8, 1, 4);
  for (double v : z.to_vector()) CHECK(v == 0.0);

  auto small = oracle::random_tensor({32, 32, 1}, rng, 0, 1);
  CHECK(unpatchify(patchify(small, 8), 32, 32, 1, 8).to_vector() == small.to_vector());

  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t pp = 1 + rng() % 4, gh = 1 + rng() % 4, gw = 1 + rng() % 4, c = 1 + rng() % 3;
    auto im = oracle::random_tensor({gh * pp, gw * pp, c}, rng);
    auto pt = patchify(im, pp);
    CHECK(pt.shape() == Shape{gh * gw, pp * pp * c});
    CHECK(unpatchify(pt, gh * pp, gw * pp, c, pp).to_vector() == im.to_vector());
    auto rnd = oracle::random_tensor(pt.shape(), rng);
    CHECK(patchify(unpatchify(rnd, gh * pp, gw * pp, c, pp), pp).to_vector() == rnd.to_vector());
  }
}
