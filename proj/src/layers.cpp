#include "transfusion/layers.hpp"

#include <cmath>

#include "transfusion/ops.hpp"

namespace transfusion::nn {

namespace {

void require_2d(const Tensor& x, const char* name) {
  if (x.rank() != 2) throw ShapeError(std::string(name) + ": expected a 2-d input, got " + shape_str(x.shape()));
}

}  // namespace

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

Linear Linear::init(std::size_t d_in, std::size_t d_out, Rng& rng) {
  if (d_in == 0 || d_out == 0) throw ShapeError("Linear: dimensions must be positive");
  return {init_uniform({d_in, d_out}, d_in, rng), Tensor::zeros({d_out}, true)};
}

Tensor linear(const Tensor& x, const Linear& layer) {
  require_2d(x, "linear");
  if (x.dim(1) != layer.in_dim()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(layer.weight.shape()));
  }
  return add(matmul(x, layer.weight), expand_rows(layer.bias, x.dim(0)));
}

LayerNormParams LayerNormParams::init(std::size_t d) {
  return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  const std::size_t l = x.dim(0), d = x.dim(1);
  if (d < 2) throw ShapeError("layer_norm: feature dimension must be at least 2");
  if (gain.numel() != d || bias.numel() != d) throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  if (!(eps > 0.0)) throw ConfigError("layer_norm: eps must be positive");
  Tensor centered = sub(x, expand_cols(reduce(x, 1, ReduceKind::mean), d));
  Tensor var = reduce(mul(centered, centered), 1, ReduceKind::mean);
  Tensor normed = div(centered, expand_cols(sqrt(add_scalar(var, eps)), d));
  return add(mul(normed, expand_rows(gain, l)), expand_rows(bias, l));
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params) {
  return layer_norm(x, params.gain, params.bias);
}

Conv1dParams Conv1dParams::init(std::size_t k, std::size_t d_in, std::size_t d_out, Rng& rng) {
  if (k % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
  return {init_uniform({k, d_in, d_out}, k * d_in, rng), Tensor::zeros({d_out}, true)};
}

Tensor conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require_2d(x, "conv1d");
  if (kernel.rank() != 3) throw ShapeError("conv1d: kernel must be [k x d_in x d_out]");
  const std::size_t l = x.dim(0), d_in = x.dim(1);
  const std::size_t k = kernel.dim(0), d_out = kernel.dim(2);
  if (k % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
  if (kernel.dim(1) != d_in) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
  }
  if (bias.numel() != d_out) throw ShapeError("conv1d: bias must have " + std::to_string(d_out) + " entries");

  Tensor columns = x;
  if (k > 1) {
    // im2col: column block j holds the input shifted by j - pad rows.
    const std::size_t pad = (k - 1) / 2;
    Tensor zeros = Tensor::zeros({pad, d_in});
    Tensor padded = concat({zeros, x, zeros}, 0);
    std::vector<Tensor> taps;
    taps.reserve(k);
    for (std::size_t j = 0; j < k; ++j) taps.push_back(slice(padded, 0, j, j + l));
    columns = concat(taps, 1);
  }
  Tensor out = matmul(columns, reshape(kernel, {k * d_in, d_out}));
  return add(out, expand_rows(bias, l));
}

Tensor conv1d(const Tensor& x, const Conv1dParams& params) { return conv1d(x, params.kernel, params.bias); }

Tensor positional_encoding(std::size_t length, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("positional_encoding: d must be even, got " + std::to_string(d));
  if (length == 0) throw ShapeError("positional_encoding: length must be positive");
  std::vector<double> values(length * d);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      values[pos * d + i] = std::sin(angle);
      values[pos * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({length, d}, std::move(values));
}

std::string kernel_name(AttentionKernel kernel) { return kernel == AttentionKernel::linear ? "linear" : "softmax"; }

AttentionKernel parse_kernel(const std::string& name) {
  if (name == "linear") return AttentionKernel::linear;
  if (name == "softmax") return AttentionKernel::softmax;
  throw ConfigError("unknown attention kernel '" + name + "'");
}

Tensor feature_map(const Tensor& u) { return add_scalar(elu(u), 1.0); }

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, AttentionKernel kernel, bool scale_qk) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  require_2d(v, "attention");
  if (q.dim(1) != k.dim(1)) throw ShapeError("attention: query/key widths differ");
  if (k.dim(0) != v.dim(0)) throw ShapeError("attention: key/value lengths differ");

  if (kernel == AttentionKernel::softmax) {
    Tensor scores = matmul(q, transpose2d(k));
    if (scale_qk) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    return matmul(softmax_rows(scores), v);
  }
  Tensor phi_q = feature_map(q);
  Tensor phi_k = feature_map(k);
  Tensor kv = matmul(transpose2d(phi_k), v);                               // [d_k x d_v]
  Tensor k_sum = reshape(reduce(phi_k, 0, ReduceKind::sum), {k.dim(1), 1});  // [d_k x 1]
  Tensor numer = matmul(phi_q, kv);                                        // [l_q x d_v]
  Tensor denom = clamp_min(matmul(phi_q, k_sum), kLinearAttentionFloor);   // [l_q x 1]
  return div(numer, expand_cols(denom, v.dim(1)));
}

AttentionHeadConfig AttentionHeadConfig::make(std::size_t d_model, std::size_t n_heads, AttentionKernel kernel,
                                              bool scale_qk) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("n_heads (" + std::to_string(n_heads) + ") must divide d_model (" + std::to_string(d_model) + ")");
  }
  return {d_model, n_heads, d_model / n_heads, d_model / n_heads, kernel, scale_qk};
}

void AttentionHeadConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_k == 0 || d_v == 0) throw ConfigError("attention dims must be positive");
  if (n_heads * d_k != d_model || n_heads * d_v != d_model) {
    throw ConfigError("attention config needs n_heads*d_k == n_heads*d_v == d_model");
  }
}

MultiHeadAttentionParams MultiHeadAttentionParams::init(const AttentionHeadConfig& cfg, std::size_t d_src, Rng& rng) {
  cfg.validate();
  const std::size_t dk = cfg.n_heads * cfg.d_k, dv = cfg.n_heads * cfg.d_v;
  MultiHeadAttentionParams p;
  p.w_q = init_uniform({cfg.d_model, dk}, cfg.d_model, rng);
  p.w_k = init_uniform({d_src, dk}, d_src, rng);
  p.w_v = init_uniform({d_src, dv}, d_src, rng);
  p.out = Linear::init(dv, cfg.d_model, rng);
  return p;
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionHeadConfig& cfg,
                            const MultiHeadAttentionParams& params) {
  cfg.validate();
  require_2d(x_q, "multi_head_attention");
  require_2d(x_kv, "multi_head_attention");
  if (x_q.dim(1) != cfg.d_model || x_q.dim(1) != params.w_q.dim(0) || x_kv.dim(1) != params.w_k.dim(0)) {
    throw ShapeError("multi_head_attention: inputs " + shape_str(x_q.shape()) + ", " + shape_str(x_kv.shape()) +
                     " do not match the projections");
  }
  Tensor q = matmul(x_q, params.w_q);
  Tensor k = matmul(x_kv, params.w_k);
  Tensor v = matmul(x_kv, params.w_v);
  if (cfg.n_heads == 1) return linear(attention(q, k, v, cfg.kernel, cfg.scale_qk), params.out);

  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    heads.push_back(attention(slice(q, 1, h * cfg.d_k, (h + 1) * cfg.d_k), slice(k, 1, h * cfg.d_k, (h + 1) * cfg.d_k),
                              slice(v, 1, h * cfg.d_v, (h + 1) * cfg.d_v), cfg.kernel, cfg.scale_qk));
  }
  return linear(concat(heads, 1), params.out);
}

void MultiScaleConvConfig::validate() const {
  if (kernel_sizes.empty()) throw ConfigError("multi-scale conv needs at least one kernel size");
  for (auto k : kernel_sizes) {
    if (k == 0 || k % 2 == 0) throw ConfigError("multi-scale kernel sizes must be odd, got " + std::to_string(k));
  }
  if (d_model == 0) throw ConfigError("multi-scale conv d_model must be positive");
}

MultiScaleConvParams MultiScaleConvParams::init(const MultiScaleConvConfig& cfg, Rng& rng) {
  cfg.validate();
  MultiScaleConvParams p;
  for (auto k : cfg.kernel_sizes) p.branches.push_back(Conv1dParams::init(k, cfg.d_model, cfg.d_model, rng));
  return p;
}

Tensor multi_scale_conv(const Tensor& x, const MultiScaleConvConfig& cfg, const MultiScaleConvParams& params) {
  cfg.validate();
  if (params.branches.size() != cfg.kernel_sizes.size()) {
    throw ShapeError("multi_scale_conv: parameter branches do not match the kernel list");
  }
  Tensor total = conv1d(x, params.branches.front());
  for (std::size_t b = 1; b < params.branches.size(); ++b) total = add(total, conv1d(x, params.branches[b]));
  return relu(total);
}

FeedForwardParams FeedForwardParams::init(std::size_t d_model, std::size_t d_ff, Rng& rng) {
  if (d_ff == 0) throw ConfigError("ffn hidden width must be positive");
  return {Linear::init(d_model, d_ff, rng), Linear::init(d_ff, d_model, rng)};
}

Tensor ffn(const Tensor& x, const FeedForwardParams& params) {
  return linear(relu(linear(x, params.fc1)), params.fc2);
}

}  // namespace transfusion::nn
