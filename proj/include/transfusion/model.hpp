#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "transfusion/layers.hpp"
#include "transfusion/tensor.hpp"

namespace transfusion {

enum class Streams { both, wifi_only, vision_only };
enum class ResidualMode { normalized, raw };

std::string streams_name(Streams s);
Streams parse_streams(const std::string& name);
std::string residual_name(ResidualMode r);
ResidualMode parse_residual(const std::string& name);

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  std::vector<std::size_t> kernel_sizes{1, 3, 5};
  nn::AttentionKernel attention_kernel = nn::AttentionKernel::linear;
  // Input geometry: CSI sequence l_w x d_w, image patch sequence l_v x d_v.
  std::size_t l_w = 100;
  std::size_t d_w = 30;
  std::size_t l_v = 16;
  std::size_t d_v = 256;
  // Temporal convolution widths of the two modality embeddings.
  std::size_t embed_kernel_w = 3;
  std::size_t embed_kernel_v = 3;
  Streams streams = Streams::both;
  bool use_multiscale = true;
  bool scale_qk = true;
  // normalized: sub-layer residuals add LN(input); raw: they add the input.
  ResidualMode residual = ResidualMode::normalized;
  std::uint64_t seed = 0;

  void validate() const;
  nn::AttentionHeadConfig attention_config() const;
  bool operator==(const ModelConfig&) const = default;

  // d_model=8, one layer, two heads, l_w=6, l_v=4: small enough for exhaustive
  // finite-difference checks.
  static ModelConfig tiny();
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

enum class Ablation { vision_stream, wifi_stream, multiscale_cnn, linear_attention };

Ablation parse_ablation(const std::string& name);
std::string ablation_name(Ablation a);
// Removes exactly one component from a full-model config.
ModelConfig ablate(const ModelConfig& cfg, Ablation which);

struct ConvSublayer {
  nn::LayerNormParams ln;
  nn::MultiScaleConvParams conv;
};

struct CrossModalBlock {
  nn::LayerNormParams ln_query;
  nn::LayerNormParams ln_source;
  nn::MultiHeadAttentionParams attn;
  std::optional<ConvSublayer> conv;  // absent when multi-scale conv is ablated
  nn::LayerNormParams ln_ffn;
  nn::FeedForwardParams ffn;
};

struct SelfAttentionBlock {
  nn::LayerNormParams ln;
  nn::MultiHeadAttentionParams attn;
};

// N cross-modal blocks whose queries come from one modality, followed by a
// self-attention block over the result.
struct CrossModalStream {
  std::vector<CrossModalBlock> blocks;
  SelfAttentionBlock self_attn;
};

struct TransFusionModel {
  ModelConfig cfg;
  std::optional<nn::Conv1dParams> wifi_embed;
  std::optional<nn::Conv1dParams> vision_embed;
  // Queries from vision, keys/values from WiFi (W->V); output length l_v.
  std::optional<CrossModalStream> vision_stream;
  // Queries from WiFi, keys/values from vision (V->W); output length l_w.
  std::optional<CrossModalStream> wifi_stream;
  nn::Linear head_hidden;
  nn::Linear head_out;

  // Structural order; names are dotted paths such as
  // "vision_stream.block0.attn.w_q".
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

// Deterministic in cfg.seed.
TransFusionModel build(const ModelConfig& cfg);

// Fresh model with identical configuration and parameter values.
TransFusionModel clone(const TransFusionModel& model);

using ParameterSnapshot = std::vector<std::vector<double>>;
ParameterSnapshot snapshot(const TransFusionModel& model);
void restore(TransFusionModel& model, const ParameterSnapshot& snap);

struct Embeddings {
  Tensor wifi;    // [l_w x d_model], undefined under vision_only
  Tensor vision;  // [l_v x d_model], undefined under wifi_only
};

// Temporal conv to d_model, plus the sinusoidal table.
Embeddings embed(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v);

// One cross-modal layer: attention (queries from z_prev, keys/values from the
// other modality's layer-0 features), multi-scale conv, feed-forward, each
// with a residual connection and layer norm on its input.
Tensor cross_modal_block(const Tensor& z_prev, const Tensor& z0_source, const CrossModalBlock& block,
                         const ModelConfig& cfg);

// Self-attention over a stream output, evaluated for the final position only.
Tensor self_attention_last(const Tensor& z, const SelfAttentionBlock& block, const ModelConfig& cfg);

// Predicted count for one sample, shape [1]. The missing modality of an
// ablated model is ignored and may be undefined.
Tensor forward(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v);

// x_w [B x l_w x d_w], x_v [B x l_v x d_v] -> [B]
Tensor forward_batch(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v);

// Mean absolute error between predictions and labels.
Tensor l1_loss(const Tensor& preds, const Tensor& labels);

}  // namespace transfusion
