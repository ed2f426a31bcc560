#pragma once

// Independent reference implementations used only by tests. None of these
// call into the library's op layer; they work on plain vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "transfusion/tensor.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix to_matrix(const transfusion::Tensor& t) {
  Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline transfusion::Tensor random_tensor(transfusion::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(transfusion::shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return transfusion::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline double phi(double u) { return u > 0 ? u + 1.0 : std::exp(u); }

// Explicit l_q x l_kv weight matrix phi(Q) phi(K)^T, row-normalized, times V.
inline Matrix linear_attention_quadratic(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> w(k.size(), 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      for (std::size_t c = 0; c < q[i].size(); ++c) w[j] += phi(q[i][c]) * phi(k[j][c]);
      total += w[j];
    }
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += w[j] / total * v[j][c];
  }
  return out;
}

inline Matrix softmax_attention(const Matrix& q, const Matrix& k, const Matrix& v, bool scaled) {
  const double s = scaled ? 1.0 / std::sqrt(static_cast<double>(q[0].size())) : 1.0;
  Matrix out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> logits(k.size(), 0.0);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < q[i].size(); ++c) logits[j] += q[i][c] * k[j][c] * s;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (auto& l : logits) total += (l = std::exp(l - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += logits[j] / total * v[j][c];
  }
  return out;
}

// Direct-sum cross-correlation with zero padding; kernel[k][d_in][d_out].
inline Matrix conv1d(const Matrix& x, const std::vector<Matrix>& kernel, const std::vector<double>& bias) {
  const long l = static_cast<long>(x.size());
  const long k = static_cast<long>(kernel.size());
  const long pad = (k - 1) / 2;
  const std::size_t d_out = bias.size();
  Matrix out(x.size(), std::vector<double>(d_out, 0.0));
  for (long t = 0; t < l; ++t) {
    for (std::size_t o = 0; o < d_out; ++o) out[t][o] = bias[o];
    for (long j = 0; j < k; ++j) {
      const long src = t + j - pad;
      if (src < 0 || src >= l) continue;
      for (std::size_t i = 0; i < x[src].size(); ++i)
        for (std::size_t o = 0; o < d_out; ++o) out[t][o] += x[src][i] * kernel[j][i][o];
    }
  }
  return out;
}

inline std::vector<Matrix> kernel_of(const transfusion::Tensor& kernel) {
  const std::size_t k = kernel.dim(0), di = kernel.dim(1), dout = kernel.dim(2);
  std::vector<Matrix> out(k, Matrix(di, std::vector<double>(dout)));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < di; ++b)
      for (std::size_t c = 0; c < dout; ++c) out[a][b][c] = kernel.at((a * di + b) * dout + c);
  return out;
}

// Full sort per window; even windows average the two middle elements.
inline double sorted_median(std::vector<double> w) {
  std::sort(w.begin(), w.end());
  const std::size_t n = w.size();
  return n % 2 == 1 ? w[n / 2] : (w[n / 2 - 1] + w[n / 2]) / 2.0;
}

struct HampelOut {
  std::vector<double> filtered;
  std::vector<bool> mask;
};

inline HampelOut hampel_brute_force(const std::vector<double>& x, std::size_t k, double n_sigmas) {
  HampelOut out{x, std::vector<bool>(x.size(), false)};
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> w;
    for (std::size_t j = (i >= k ? i - k : 0); j <= std::min(x.size() - 1, i + k); ++j) w.push_back(x[j]);
    const double med = sorted_median(w);
    std::vector<double> dev;
    for (double v : w) dev.push_back(std::fabs(v - med));
    const double sigma = 1.4826 * sorted_median(dev);
    if (std::fabs(x[i] - med) > n_sigmas * sigma) {
      out.filtered[i] = med;
      out.mask[i] = true;
    }
  }
  return out;
}

// Central difference of a scalar function of a flat vector.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double eps) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = x[i];
    x[i] = s + eps;
    const double plus = f(x);
    x[i] = s - eps;
    const double minus = f(x);
    x[i] = s;
    g[i] = (plus - minus) / (2 * eps);
  }
  return g;
}

}  // namespace oracle
