#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "transfusion/grad_check.hpp"
#include "transfusion/layers.hpp"
#include "transfusion/ops.hpp"

using namespace transfusion;
using namespace transfusion::nn;

namespace {

Tensor eye(std::size_t n) {
  auto t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

double max_abs_diff(const oracle::Matrix& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::fabs(a[i][j] - b.at(i, j)));
  return m;
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, oracle::random_tensor(y.shape(), rng)));
}

}  // namespace

TEST_CASE("linear") {
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({4, 3}, rng);
  Linear id{eye(3), Tensor::zeros({3})};
  CHECK(linear(x, id).to_vector() == x.to_vector());

  Linear l{Tensor::from({2, 1}, {1, 1}), Tensor::from({1}, {1})};
  CHECK(linear(Tensor::from({1, 2}, {1, 1}), l).item() == 3.0);
  CHECK_THROWS_AS(linear(Tensor::zeros({2, 4}), l), ShapeError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    auto layer = Linear::init(3, 2, r);
    layer.bias = oracle::random_tensor({2}, r, -1, 1, true);
    auto xi = oracle::random_tensor({4, 3}, r);
    auto rep = grad_check_leaves([&] { return weighted_sum(linear(xi, layer), seed); }, {layer.weight, layer.bias},
                                 1e-5, 1e-4);
    CHECK(rep.pass);
  }
}

TEST_CASE("layer_norm") {
  auto g = Tensor::full({3}, 1.0), b = Tensor::zeros({3});
  auto c = layer_norm(Tensor::from({1, 3}, {5, 5, 5}), g, b);
  for (double v : c.to_vector()) CHECK(v == 0.0);

  auto r = layer_norm(Tensor::from({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-15);
  CHECK(r.at(0) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.at(1) == doctest::Approx(1.0).epsilon(1e-12));

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = oracle::random_tensor({5, 6}, rng, -3, 3);
    auto bias = oracle::random_tensor({6}, rng);
    auto y = layer_norm(x, Tensor::full({6}, 1.7), bias);
    const auto bv = bias.to_vector();
    const double bias_mean = std::accumulate(bv.begin(), bv.end(), 0.0) / 6.0;
    for (std::size_t i = 0; i < 5; ++i) {
      double m = 0;
      for (std::size_t j = 0; j < 6; ++j) m += y.at(i, j);
      CHECK(m / 6.0 == doctest::Approx(bias_mean).epsilon(1e-9));
    }
  }

  SUBCASE("gradient") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 r(seed);
      auto x = oracle::random_tensor({3, 4}, r, -2, 2, true);
      auto gain = oracle::random_tensor({4}, r, 0.5, 1.5, true);
      auto bias2 = oracle::random_tensor({4}, r, -1, 1, true);
      auto rep = grad_check_leaves([&] { return weighted_sum(layer_norm(x, gain, bias2), seed + 7); },
                                   {x, gain, bias2}, 1e-5, 1e-4);
      CHECK(rep.pass);
    }
  }
}

TEST_CASE("conv1d") {
  std::mt19937_64 rng(3);
  auto x = oracle::random_tensor({5, 3}, rng);
  CHECK(conv1d(x, reshape(eye(3), {1, 3, 3}), Tensor::zeros({3})).to_vector() == x.to_vector());

  auto y = conv1d(Tensor::from({3, 1}, {1, 2, 3}), Tensor::from({3, 1, 1}, {1, 1, 1}), Tensor::zeros({1}));
  CHECK(y.to_vector() == std::vector<double>{3, 6, 5});

  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({2, 3, 3}), Tensor::zeros({3})), ConfigError);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    for (std::size_t k : {1, 3, 5, 7}) {
      auto p = Conv1dParams::init(k, 3, 2, r);
      p.bias = oracle::random_tensor({2}, r, -1, 1, true);
      auto xi = oracle::random_tensor({4, 3}, r);
      auto got = conv1d(xi, p);
      auto want = oracle::conv1d(oracle::to_matrix(xi), oracle::kernel_of(p.kernel), p.bias.to_vector());
      CHECK(max_abs_diff(want, got) < 1e-12);
    }
    auto p = Conv1dParams::init(3, 2, 2, r);
    auto xi = oracle::random_tensor({5, 2}, r, -1, 1, true);
    auto rep = grad_check_leaves([&] { return weighted_sum(conv1d(xi, p), seed); }, {xi, p.kernel}, 1e-5, 1e-4);
    CHECK(rep.pass);
  }
}

TEST_CASE("linear maps are linear") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Rng r(trial);
    auto conv = Conv1dParams::init(3, 4, 2, r);
    auto lin = Linear::init(4, 3, r);
    auto a = oracle::random_tensor({6, 4}, rng), b = oracle::random_tensor({6, 4}, rng);
    const double s = 1.3, t = -0.4;
    auto mix = add(scale(a, s), scale(b, t));
    // Bias terms are affine; subtract f(0).
    auto zero = Tensor::zeros({6, 4});
    auto check = [&](auto f) {
      auto lhs = sub(f(mix), f(zero));
      auto rhs = add(scale(sub(f(a), f(zero)), s), scale(sub(f(b), f(zero)), t));
      for (std::size_t i = 0; i < lhs.numel(); ++i) CHECK(std::fabs(lhs.at(i) - rhs.at(i)) < 1e-10);
    };
    check([&](const Tensor& x) { return conv1d(x, conv); });
    check([&](const Tensor& x) { return linear(x, lin); });
    // Scaling alone, with zero bias.
    auto k = conv1d(scale(a, 2.5), conv.kernel, Tensor::zeros({2}));
    auto k1 = conv1d(a, conv.kernel, Tensor::zeros({2}));
    for (std::size_t i = 0; i < k.numel(); ++i) CHECK(std::fabs(k.at(i) - 2.5 * k1.at(i)) < 1e-10);
  }
}

TEST_CASE("positional_encoding") {
  auto pe = positional_encoding(3, 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(pe.at(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  CHECK(pe.at(1, 0) == doctest::Approx(0.841471).epsilon(1e-6));
  CHECK(pe.at(1, 0) == std::sin(1.0));
  // Frequency of column pair j follows 10000^(2j/d).
  CHECK(pe.at(2, 3) == doctest::Approx(std::cos(2.0 / std::pow(10000.0, 2.0 / 8.0))).epsilon(1e-14));
  CHECK_THROWS_AS(positional_encoding(3, 7), ConfigError);

  for (std::size_t l : {1, 5, 17})
    for (std::size_t d : {2, 6, 32}) {
      auto a = positional_encoding(l, d), b = positional_encoding(l, d);
      CHECK(a.to_vector() == b.to_vector());
      for (double v : a.to_vector()) CHECK(std::fabs(v) <= 1.0);
    }
}

TEST_CASE("attention") {
  std::mt19937_64 rng(5);
  SUBCASE("single key returns its value") {
    auto q = oracle::random_tensor({4, 3}, rng), k = oracle::random_tensor({1, 3}, rng);
    auto v = oracle::random_tensor({1, 2}, rng);
    for (auto kern : {AttentionKernel::softmax, AttentionKernel::linear}) {
      auto y = attention(q, k, v, kern);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(y.at(i, j) == doctest::Approx(v.at(0, j)).epsilon(1e-12));
    }
  }
  SUBCASE("identical keys average the values") {
    auto q = oracle::random_tensor({2, 3}, rng);
    auto k = Tensor::from({3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
    auto v = oracle::random_tensor({3, 2}, rng);
    auto y = attention(q, k, v, AttentionKernel::softmax);
    for (std::size_t j = 0; j < 2; ++j) {
      const double m = (v.at(0, j) + v.at(1, j) + v.at(2, j)) / 3.0;
      CHECK(y.at(0, j) == doctest::Approx(m).epsilon(1e-12));
    }
  }
  SUBCASE("linear kernel equals the quadratic form") {
    for (int trial = 0; trial < 20; ++trial) {
      std::uniform_int_distribution<std::size_t> ext(1, 7);
      const std::size_t lq = trial == 0 ? 5 : ext(rng), lk = trial == 0 ? 5 : ext(rng), dk = 4, dv = ext(rng);
      auto q = oracle::random_tensor({lq, dk}, rng, -2, 2), k = oracle::random_tensor({lk, dk}, rng, -2, 2);
      auto v = oracle::random_tensor({lk, dv}, rng, -2, 2);
      auto want = oracle::linear_attention_quadratic(oracle::to_matrix(q), oracle::to_matrix(k), oracle::to_matrix(v));
      CHECK(max_abs_diff(want, attention(q, k, v, AttentionKernel::linear)) < 1e-10);
    }
  }
  SUBCASE("softmax kernel matches a direct loop") {
    for (bool scaled : {true, false}) {
      auto q = oracle::random_tensor({3, 4}, rng), k = oracle::random_tensor({5, 4}, rng);
      auto v = oracle::random_tensor({5, 2}, rng);
      auto want =
          oracle::softmax_attention(oracle::to_matrix(q), oracle::to_matrix(k), oracle::to_matrix(v), scaled);
      CHECK(max_abs_diff(want, attention(q, k, v, AttentionKernel::softmax, scaled)) < 1e-12);
    }
  }
  SUBCASE("softmax outputs are convex combinations") {
    for (int trial = 0; trial < 20; ++trial) {
      auto q = oracle::random_tensor({4, 3}, rng, -3, 3), k = oracle::random_tensor({6, 3}, rng, -3, 3);
      auto v = oracle::random_tensor({6, 2}, rng, -5, 5);
      auto y = attention(q, k, v, AttentionKernel::softmax);
      for (std::size_t j = 0; j < 2; ++j) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t r = 0; r < 6; ++r) lo = std::min(lo, v.at(r, j)), hi = std::max(hi, v.at(r, j));
        for (std::size_t i = 0; i < 4; ++i) {
          CHECK(y.at(i, j) >= lo - 1e-12);
          CHECK(y.at(i, j) <= hi + 1e-12);
        }
      }
    }
  }
  SUBCASE("empty or mismatched inputs") {
    CHECK_THROWS_AS(attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 4}), Tensor::zeros({2, 2}),
                              AttentionKernel::softmax),
                    ShapeError);
    CHECK_THROWS_AS(attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), Tensor::zeros({3, 2}),
                              AttentionKernel::linear),
                    ShapeError);
  }
  SUBCASE("gradients") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 r(seed);
      auto q = oracle::random_tensor({3, 4}, r, -1, 1, true), k = oracle::random_tensor({5, 4}, r, -1, 1, true);
      auto v = oracle::random_tensor({5, 2}, r, -1, 1, true);
      for (auto kern : {AttentionKernel::softmax, AttentionKernel::linear}) {
        auto rep = grad_check_leaves([&] { return weighted_sum(attention(q, k, v, kern), seed); }, {q, k, v}, 1e-5,
                                     1e-4);
        CAPTURE(kernel_name(kern));
        CHECK(rep.pass);
      }
    }
  }
}

TEST_CASE("attention head config") {
  auto cfg = AttentionHeadConfig::make(8, 2, AttentionKernel::linear);
  CHECK(cfg.d_k == 4);
  CHECK(cfg.d_v == 4);
  CHECK_THROWS_AS(AttentionHeadConfig::make(8, 3, AttentionKernel::linear), ConfigError);
  CHECK(parse_kernel(kernel_name(AttentionKernel::softmax)) == AttentionKernel::softmax);
  CHECK_THROWS_AS(parse_kernel("cosine"), ConfigError);
}

TEST_CASE("multi_head_attention") {
  std::mt19937_64 rng(6);
  SUBCASE("one head is attention between two linear maps") {
    Rng r(1);
    auto cfg = AttentionHeadConfig::make(4, 1, AttentionKernel::softmax);
    auto p = MultiHeadAttentionParams::init(cfg, 4, r);
    auto xq = oracle::random_tensor({3, 4}, rng), xkv = oracle::random_tensor({5, 4}, rng);
    auto y = multi_head_attention(xq, xkv, cfg, p);
    auto direct = linear(attention(matmul(xq, p.w_q), matmul(xkv, p.w_k), matmul(xkv, p.w_v), cfg.kernel), p.out);
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(direct.at(i)).epsilon(1e-12));
  }
  SUBCASE("shape and permutation invariance") {
    for (int trial = 0; trial < 20; ++trial) {
      Rng r(trial);
      auto cfg = AttentionHeadConfig::make(6, 3, AttentionKernel::softmax);
      auto p = MultiHeadAttentionParams::init(cfg, 5, r);
      const std::size_t lkv = 2 + trial % 6;
      auto xq = oracle::random_tensor({4, 6}, rng), xkv = oracle::random_tensor({lkv, 5}, rng);
      auto y = multi_head_attention(xq, xkv, cfg, p);
      CHECK(y.shape() == Shape{4, 6});

      std::vector<std::size_t> perm(lkv);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<Tensor> rows;
      for (auto i : perm) rows.push_back(slice(xkv, 0, i, i + 1));
      auto yp = multi_head_attention(xq, concat(rows, 0), cfg, p);
      for (std::size_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.at(i) - yp.at(i)) < 1e-12);

      auto lin_cfg = cfg;
      lin_cfg.kernel = AttentionKernel::linear;
      auto yl = multi_head_attention(xq, xkv, lin_cfg, p);
      auto ylp = multi_head_attention(xq, concat(rows, 0), lin_cfg, p);
      for (std::size_t i = 0; i < yl.numel(); ++i) CHECK(std::fabs(yl.at(i) - ylp.at(i)) < 1e-10);
    }
  }
  SUBCASE("gradient through all projections") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng r(seed);
      auto cfg = AttentionHeadConfig::make(4, 2, seed % 2 ? AttentionKernel::linear : AttentionKernel::softmax);
      auto p = MultiHeadAttentionParams::init(cfg, 3, r);
      auto xq = oracle::random_tensor({3, 4}, r), xkv = oracle::random_tensor({4, 3}, r);
      auto rep = grad_check_leaves([&] { return weighted_sum(multi_head_attention(xq, xkv, cfg, p), seed); },
                                   {p.w_q, p.w_k, p.w_v, p.out.weight}, 1e-5, 1e-4);
      CHECK(rep.pass);
    }
  }
}

TEST_CASE("multi_scale_conv") {
  std::mt19937_64 rng(7);
  {
    MultiScaleConvConfig cfg{{1}, 3};
    MultiScaleConvParams p{{Conv1dParams{reshape(eye(3), {1, 3, 3}), Tensor::zeros({3})}}};
    auto x = oracle::random_tensor({4, 3}, rng, 0, 1);
    CHECK(multi_scale_conv(x, cfg, p).to_vector() == x.to_vector());
  }
  CHECK_THROWS_AS((MultiScaleConvConfig{{1, 2}, 3}.validate()), ConfigError);
  CHECK_THROWS_AS((MultiScaleConvConfig{{}, 3}.validate()), ConfigError);

  for (int trial = 0; trial < 20; ++trial) {
    Rng r(trial);
    MultiScaleConvConfig cfg{{1, 3}, 4};
    auto p = MultiScaleConvParams::init(cfg, r);
    const std::size_t l = 1 + trial % 7;
    auto x = oracle::random_tensor({l, 4}, rng);
    auto y = multi_scale_conv(x, cfg, p);
    CHECK(y.shape() == Shape{l, 4});
    auto b1 = oracle::conv1d(oracle::to_matrix(x), oracle::kernel_of(p.branches[0].kernel),
                             p.branches[0].bias.to_vector());
    auto b3 = oracle::conv1d(oracle::to_matrix(x), oracle::kernel_of(p.branches[1].kernel),
                             p.branches[1].bias.to_vector());
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(y.at(i, j) - std::max(0.0, b1[i][j] + b3[i][j])) < 1e-12);
  }
}

TEST_CASE("ffn") {
  std::mt19937_64 rng(8);
  FeedForwardParams id{{eye(3), Tensor::zeros({3})}, {eye(3), Tensor::zeros({3})}};
  auto x = oracle::random_tensor({4, 3}, rng, 0, 1);
  CHECK(ffn(x, id).to_vector() == x.to_vector());

  FeedForwardParams dead{{Tensor::from({1, 1}, {1}), Tensor::zeros({1})},
                         {Tensor::from({1, 1}, {2}), Tensor::from({1}, {0.25})}};
  CHECK(ffn(Tensor::from({1, 1}, {-1}), dead).item() == 0.25);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    auto p = FeedForwardParams::init(3, 5, r);
    auto xi = oracle::random_tensor({4, 3}, r, -1, 1, true);
    auto rep = grad_check_leaves([&] { return weighted_sum(ffn(xi, p), seed); },
                                 {xi, p.fc1.weight, p.fc1.bias, p.fc2.weight}, 1e-5, 1e-4);
    CHECK(rep.pass);
  }
}
