#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "transfusion/tensor.hpp"

namespace transfusion::nn {

using Rng = std::mt19937_64;

// Weights drawn from U(-sqrt(1/fan_in), +sqrt(1/fan_in)); biases zero.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

struct Linear {
  Tensor weight;  // [d_in x d_out]
  Tensor bias;    // [d_out]

  static Linear init(std::size_t d_in, std::size_t d_out, Rng& rng);
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

// x W + b with the bias repeated over rows.
Tensor linear(const Tensor& x, const Linear& layer);

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormParams {
  Tensor gain;  // [d], ones at init
  Tensor bias;  // [d], zeros at init

  static LayerNormParams init(std::size_t d);
};

// Per-row normalization with biased variance; eps sits inside the root.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps);
Tensor layer_norm(const Tensor& x, const LayerNormParams& params);

struct Conv1dParams {
  Tensor kernel;  // [k x d_in x d_out]
  Tensor bias;    // [d_out]

  static Conv1dParams init(std::size_t k, std::size_t d_in, std::size_t d_out, Rng& rng);
  std::size_t width() const { return kernel.dim(0); }
};

// Same-length cross-correlation along the sequence axis with zero padding.
// Output row t sees input rows t-(k-1)/2 .. t+(k-1)/2. Even k is rejected.
Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias);
Tensor conv1d(const Tensor& x, const Conv1dParams& params);

// Sinusoidal table: PE[pos, 2j] = sin(pos / 10000^(2j/d)),
// PE[pos, 2j+1] = cos(pos / 10000^(2j/d)). d must be even.
Tensor positional_encoding(std::size_t length, std::size_t d);

enum class AttentionKernel { softmax, linear };

std::string kernel_name(AttentionKernel kernel);
AttentionKernel parse_kernel(const std::string& name);

// Lower bound on the linear-attention normalizer.
inline constexpr double kLinearAttentionFloor = 1e-6;

// phi(u) = elu(u) + 1, strictly positive.
Tensor feature_map(const Tensor& u);

/// Single-head attention.
///
/// softmax: softmax_rows(Q K^T / sqrt(d_k)) V (the scaling is dropped when
/// scale_qk is false).
/// linear: out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j)),
/// evaluated right-to-left so the cost is linear in both sequence lengths.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKernel kernel,
                 bool scale_qk = true);

struct AttentionHeadConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  std::size_t d_k = 0;
  std::size_t d_v = 0;
  AttentionKernel kernel = AttentionKernel::linear;
  bool scale_qk = true;

  static AttentionHeadConfig make(std::size_t d_model, std::size_t n_heads, AttentionKernel kernel,
                                  bool scale_qk = true);
  void validate() const;
};

struct MultiHeadAttentionParams {
  Tensor w_q;  // [d_model x n_heads*d_k]
  Tensor w_k;  // [d_src x n_heads*d_k]
  Tensor w_v;  // [d_src x n_heads*d_v]
  Linear out;  // [n_heads*d_v -> d_model]

  static MultiHeadAttentionParams init(const AttentionHeadConfig& cfg, std::size_t d_src, Rng& rng);
};

// Queries from x_q, keys/values from x_kv; heads are column slices of the
// projections, concatenated and mapped back to d_model.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionHeadConfig& cfg,
                            const MultiHeadAttentionParams& params);

struct MultiScaleConvConfig {
  std::vector<std::size_t> kernel_sizes{1, 3, 5};
  std::size_t d_model = 0;

  void validate() const;
};

struct MultiScaleConvParams {
  std::vector<Conv1dParams> branches;

  static MultiScaleConvParams init(const MultiScaleConvConfig& cfg, Rng& rng);
};

// relu(sum over branches of conv1d_k(x)), every branch d_model -> d_model.
Tensor multi_scale_conv(const Tensor& x, const MultiScaleConvConfig& cfg, const MultiScaleConvParams& params);

struct FeedForwardParams {
  Linear fc1;  // d_model -> d_ff
  Linear fc2;  // d_ff -> d_model

  static FeedForwardParams init(std::size_t d_model, std::size_t d_ff, Rng& rng);
};

// relu(x W1 + b1) W2 + b2
Tensor ffn(const Tensor& x, const FeedForwardParams& params);

}  // namespace transfusion::nn
