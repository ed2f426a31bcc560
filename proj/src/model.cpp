#include "transfusion/model.hpp"

#include <algorithm>
#include <cmath>

#include "transfusion/ops.hpp"

namespace transfusion {

std::string streams_name(Streams s) {
  switch (s) {
    case Streams::both: return "both";
    case Streams::wifi_only: return "wifi_only";
    case Streams::vision_only: return "vision_only";
  }
  return "both";
}

Streams parse_streams(const std::string& name) {
  if (name == "both") return Streams::both;
  if (name == "wifi_only") return Streams::wifi_only;
  if (name == "vision_only") return Streams::vision_only;
  throw ConfigError("unknown streams value '" + name + "' (expected both, wifi_only or vision_only)");
}

std::string residual_name(ResidualMode r) { return r == ResidualMode::normalized ? "normalized" : "raw"; }

ResidualMode parse_residual(const std::string& name) {
  if (name == "normalized") return ResidualMode::normalized;
  if (name == "raw") return ResidualMode::raw;
  throw ConfigError("unknown residual mode '" + name + "' (expected normalized or raw)");
}

void ModelConfig::validate() const {
  if (d_model == 0 || d_model % 2 != 0) throw ConfigError("d_model must be positive and even");
  if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("n_heads must divide d_model");
  if (n_layers == 0) throw ConfigError("n_layers must be at least 1");
  if (d_ff == 0) throw ConfigError("d_ff must be positive");
  if (l_w == 0 || d_w == 0 || l_v == 0 || d_v == 0) throw ConfigError("input dimensions must be positive");
  if (embed_kernel_w % 2 == 0 || embed_kernel_v % 2 == 0) throw ConfigError("embedding kernel widths must be odd");
  if (use_multiscale) nn::MultiScaleConvConfig{kernel_sizes, d_model}.validate();
}

nn::AttentionHeadConfig ModelConfig::attention_config() const {
  return nn::AttentionHeadConfig::make(d_model, n_heads, attention_kernel, scale_qk);
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 16;
  cfg.kernel_sizes = {1, 3};
  cfg.l_w = 6;
  cfg.d_w = 4;
  cfg.l_v = 4;
  cfg.d_v = 16;
  return cfg;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"d_model", cfg.d_model},
                     {"n_heads", cfg.n_heads},
                     {"n_layers", cfg.n_layers},
                     {"d_ff", cfg.d_ff},
                     {"kernel_sizes", cfg.kernel_sizes},
                     {"attention_kernel", nn::kernel_name(cfg.attention_kernel)},
                     {"l_w", cfg.l_w},
                     {"d_w", cfg.d_w},
                     {"l_v", cfg.l_v},
                     {"d_v", cfg.d_v},
                     {"embed_kernel_w", cfg.embed_kernel_w},
                     {"embed_kernel_v", cfg.embed_kernel_v},
                     {"streams", streams_name(cfg.streams)},
                     {"use_multiscale", cfg.use_multiscale},
                     {"scale_qk", cfg.scale_qk},
                     {"residual", residual_name(cfg.residual)},
                     {"seed", cfg.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  try {
    ModelConfig d;
    cfg.d_model = j.value("d_model", d.d_model);
    cfg.n_heads = j.value("n_heads", d.n_heads);
    cfg.n_layers = j.value("n_layers", d.n_layers);
    cfg.d_ff = j.value("d_ff", d.d_ff);
    cfg.kernel_sizes = j.value("kernel_sizes", d.kernel_sizes);
    cfg.attention_kernel = nn::parse_kernel(j.value("attention_kernel", nn::kernel_name(d.attention_kernel)));
    cfg.l_w = j.value("l_w", d.l_w);
    cfg.d_w = j.value("d_w", d.d_w);
    cfg.l_v = j.value("l_v", d.l_v);
    cfg.d_v = j.value("d_v", d.d_v);
    cfg.embed_kernel_w = j.value("embed_kernel_w", d.embed_kernel_w);
    cfg.embed_kernel_v = j.value("embed_kernel_v", d.embed_kernel_v);
    cfg.streams = parse_streams(j.value("streams", streams_name(d.streams)));
    cfg.use_multiscale = j.value("use_multiscale", d.use_multiscale);
    cfg.scale_qk = j.value("scale_qk", d.scale_qk);
    cfg.residual = parse_residual(j.value("residual", residual_name(d.residual)));
    cfg.seed = j.value("seed", d.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

Ablation parse_ablation(const std::string& name) {
  if (name == "vision_stream") return Ablation::vision_stream;
  if (name == "wifi_stream") return Ablation::wifi_stream;
  if (name == "multiscale_cnn") return Ablation::multiscale_cnn;
  if (name == "linear_attention") return Ablation::linear_attention;
  throw ConfigError("unknown ablation '" + name + "'");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::vision_stream: return "vision_stream";
    case Ablation::wifi_stream: return "wifi_stream";
    case Ablation::multiscale_cnn: return "multiscale_cnn";
    case Ablation::linear_attention: return "linear_attention";
  }
  return "";
}

ModelConfig ablate(const ModelConfig& cfg, Ablation which) {
  ModelConfig out = cfg;
  switch (which) {
    case Ablation::vision_stream: out.streams = Streams::wifi_only; break;
    case Ablation::wifi_stream: out.streams = Streams::vision_only; break;
    case Ablation::multiscale_cnn: out.use_multiscale = false; break;
    case Ablation::linear_attention: out.attention_kernel = nn::AttentionKernel::softmax; break;
  }
  return out;
}

namespace {

bool has_wifi(const ModelConfig& cfg) { return cfg.streams != Streams::vision_only; }
bool has_vision(const ModelConfig& cfg) { return cfg.streams != Streams::wifi_only; }

CrossModalStream make_stream(const ModelConfig& cfg, nn::Rng& rng) {
  const auto att = cfg.attention_config();
  CrossModalStream s;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    CrossModalBlock b;
    b.ln_query = nn::LayerNormParams::init(cfg.d_model);
    b.ln_source = nn::LayerNormParams::init(cfg.d_model);
    b.attn = nn::MultiHeadAttentionParams::init(att, cfg.d_model, rng);
    if (cfg.use_multiscale) {
      b.conv = ConvSublayer{nn::LayerNormParams::init(cfg.d_model),
                            nn::MultiScaleConvParams::init({cfg.kernel_sizes, cfg.d_model}, rng)};
    }
    b.ln_ffn = nn::LayerNormParams::init(cfg.d_model);
    b.ffn = nn::FeedForwardParams::init(cfg.d_model, cfg.d_ff, rng);
    s.blocks.push_back(std::move(b));
  }
  s.self_attn.ln = nn::LayerNormParams::init(cfg.d_model);
  s.self_attn.attn = nn::MultiHeadAttentionParams::init(att, cfg.d_model, rng);
  return s;
}

using Named = std::vector<std::pair<std::string, Tensor>>;

void add_ln(Named& out, const std::string& prefix, const nn::LayerNormParams& ln) {
  out.emplace_back(prefix + ".gain", ln.gain);
  out.emplace_back(prefix + ".bias", ln.bias);
}

void add_linear(Named& out, const std::string& prefix, const nn::Linear& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

void add_conv(Named& out, const std::string& prefix, const nn::Conv1dParams& c) {
  out.emplace_back(prefix + ".kernel", c.kernel);
  out.emplace_back(prefix + ".bias", c.bias);
}

void add_mha(Named& out, const std::string& prefix, const nn::MultiHeadAttentionParams& p) {
  out.emplace_back(prefix + ".w_q", p.w_q);
  out.emplace_back(prefix + ".w_k", p.w_k);
  out.emplace_back(prefix + ".w_v", p.w_v);
  add_linear(out, prefix + ".out", p.out);
}

void add_stream(Named& out, const std::string& prefix, const CrossModalStream& s) {
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const auto& b = s.blocks[i];
    const std::string bp = prefix + ".block" + std::to_string(i);
    add_ln(out, bp + ".ln_query", b.ln_query);
    add_ln(out, bp + ".ln_source", b.ln_source);
    add_mha(out, bp + ".attn", b.attn);
    if (b.conv) {
      add_ln(out, bp + ".ln_conv", b.conv->ln);
      for (std::size_t k = 0; k < b.conv->conv.branches.size(); ++k) {
        add_conv(out, bp + ".conv.branch" + std::to_string(k), b.conv->conv.branches[k]);
      }
    }
    add_ln(out, bp + ".ln_ffn", b.ln_ffn);
    add_linear(out, bp + ".ffn.fc1", b.ffn.fc1);
    add_linear(out, bp + ".ffn.fc2", b.ffn.fc2);
  }
  add_ln(out, prefix + ".self_attn.ln", s.self_attn.ln);
  add_mha(out, prefix + ".self_attn.attn", s.self_attn.attn);
}

void require_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation after " + where);
  }
}

Tensor residual_base(const Tensor& raw, const Tensor& normed, const ModelConfig& cfg) {
  return cfg.residual == ResidualMode::normalized ? normed : raw;
}

Tensor run_stream(const CrossModalStream& stream, const Tensor& z0_query, const Tensor& z0_source,
                  const ModelConfig& cfg, const std::string& name) {
  Tensor z = z0_query;
  for (std::size_t i = 0; i < stream.blocks.size(); ++i) {
    z = cross_modal_block(z, z0_source, stream.blocks[i], cfg);
    require_finite(z, name + ".block" + std::to_string(i));
  }
  Tensor last = self_attention_last(z, stream.self_attn, cfg);
  require_finite(last, name + ".self_attn");
  return last;
}

}  // namespace

TransFusionModel build(const ModelConfig& cfg) {
  cfg.validate();
  nn::Rng rng(cfg.seed);
  TransFusionModel m;
  m.cfg = cfg;
  if (has_wifi(cfg)) m.wifi_embed = nn::Conv1dParams::init(cfg.embed_kernel_w, cfg.d_w, cfg.d_model, rng);
  if (has_vision(cfg)) m.vision_embed = nn::Conv1dParams::init(cfg.embed_kernel_v, cfg.d_v, cfg.d_model, rng);
  if (has_vision(cfg)) m.vision_stream = make_stream(cfg, rng);
  if (has_wifi(cfg)) m.wifi_stream = make_stream(cfg, rng);
  const std::size_t fused = cfg.streams == Streams::both ? 2 * cfg.d_model : cfg.d_model;
  m.head_hidden = nn::Linear::init(fused, cfg.d_model, rng);
  m.head_out = nn::Linear::init(cfg.d_model, 1, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> TransFusionModel::named_parameters() const {
  Named out;
  if (wifi_embed) add_conv(out, "wifi_embed", *wifi_embed);
  if (vision_embed) add_conv(out, "vision_embed", *vision_embed);
  if (vision_stream) add_stream(out, "vision_stream", *vision_stream);
  if (wifi_stream) add_stream(out, "wifi_stream", *wifi_stream);
  add_linear(out, "head.hidden", head_hidden);
  add_linear(out, "head.out", head_out);
  return out;
}

std::vector<Tensor> TransFusionModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t TransFusionModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

TransFusionModel clone(const TransFusionModel& model) {
  TransFusionModel copy = build(model.cfg);
  restore(copy, snapshot(model));
  return copy;
}

ParameterSnapshot snapshot(const TransFusionModel& model) {
  ParameterSnapshot snap;
  for (const auto& t : model.parameters()) snap.push_back(t.to_vector());
  return snap;
}

void restore(TransFusionModel& model, const ParameterSnapshot& snap) {
  auto params = model.parameters();
  if (params.size() != snap.size()) throw ShapeError("snapshot does not match model parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_data();
    if (dst.size() != snap[i].size()) throw ShapeError("snapshot tensor size mismatch");
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

Embeddings embed(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v) {
  const auto& cfg = model.cfg;
  Embeddings e;
  auto check = [](const Tensor& x, std::size_t l, std::size_t d, const char* what) {
    if (!x.defined() || x.rank() != 2 || x.dim(0) != l || x.dim(1) != d) {
      throw ShapeError(std::string(what) + " input must be " + shape_str({l, d}) + ", got " +
                       (x.defined() ? shape_str(x.shape()) : std::string("nothing")));
    }
  };
  if (model.wifi_embed) {
    check(x_w, cfg.l_w, cfg.d_w, "wifi");
    e.wifi = add(nn::conv1d(x_w, *model.wifi_embed), nn::positional_encoding(cfg.l_w, cfg.d_model));
  }
  if (model.vision_embed) {
    check(x_v, cfg.l_v, cfg.d_v, "vision");
    e.vision = add(nn::conv1d(x_v, *model.vision_embed), nn::positional_encoding(cfg.l_v, cfg.d_model));
  }
  return e;
}

Tensor cross_modal_block(const Tensor& z_prev, const Tensor& z0_source, const CrossModalBlock& block,
                         const ModelConfig& cfg) {
  const auto att = cfg.attention_config();
  Tensor q_in = nn::layer_norm(z_prev, block.ln_query);
  Tensor kv_in = nn::layer_norm(z0_source, block.ln_source);
  Tensor z_hat = add(nn::multi_head_attention(q_in, kv_in, att, block.attn), residual_base(z_prev, q_in, cfg));

  Tensor z_mid = z_hat;
  if (block.conv) {
    nn::MultiScaleConvConfig ms{cfg.kernel_sizes, cfg.d_model};
    Tensor n1 = nn::layer_norm(z_hat, block.conv->ln);
    z_mid = add(nn::multi_scale_conv(n1, ms, block.conv->conv), residual_base(z_hat, n1, cfg));
  }

  Tensor n2 = nn::layer_norm(z_mid, block.ln_ffn);
  return add(nn::ffn(n2, block.ffn), residual_base(z_mid, n2, cfg));
}

Tensor self_attention_last(const Tensor& z, const SelfAttentionBlock& block, const ModelConfig& cfg) {
  // Attention rows are independent given K/V, so the last output row only
  // needs the last query.
  const std::size_t l = z.dim(0);
  Tensor normed = nn::layer_norm(z, block.ln);
  Tensor q = slice(normed, 0, l - 1, l);
  Tensor base = cfg.residual == ResidualMode::normalized ? q : slice(z, 0, l - 1, l);
  return add(nn::multi_head_attention(q, normed, cfg.attention_config(), block.attn), base);
}

Tensor forward(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v) {
  const auto& cfg = model.cfg;
  Embeddings e = embed(model, x_w, x_v);
  if (e.wifi.defined()) require_finite(e.wifi, "wifi_embed");
  if (e.vision.defined()) require_finite(e.vision, "vision_embed");

  std::vector<Tensor> finals;
  if (model.vision_stream) {
    // Single-modality models attend within their own modality.
    const Tensor& source = e.wifi.defined() ? e.wifi : e.vision;
    finals.push_back(run_stream(*model.vision_stream, e.vision, source, cfg, "vision_stream"));
  }
  if (model.wifi_stream) {
    const Tensor& source = e.vision.defined() ? e.vision : e.wifi;
    finals.push_back(run_stream(*model.wifi_stream, e.wifi, source, cfg, "wifi_stream"));
  }
  Tensor fused = finals.size() == 1 ? finals.front() : concat(finals, 1);
  Tensor out = nn::linear(relu(nn::linear(fused, model.head_hidden)), model.head_out);
  require_finite(out, "head");
  return reshape(out, {1});
}

Tensor forward_batch(const TransFusionModel& model, const Tensor& x_w, const Tensor& x_v) {
  const auto& cfg = model.cfg;
  const bool use_w = model.wifi_embed.has_value();
  const bool use_v = model.vision_embed.has_value();
  const Tensor& lead = use_w ? x_w : x_v;
  if (!lead.defined() || lead.rank() != 3) throw ShapeError("forward_batch expects [B x l x d] inputs");
  const std::size_t batch = lead.dim(0);
  if (use_w && use_v && (!x_v.defined() || x_v.rank() != 3 || x_v.dim(0) != batch)) {
    throw ShapeError("forward_batch: modality batch sizes differ");
  }
  std::vector<Tensor> preds;
  preds.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    Tensor w = use_w ? reshape(slice(x_w, 0, b, b + 1), {cfg.l_w, cfg.d_w}) : Tensor();
    Tensor v = use_v ? reshape(slice(x_v, 0, b, b + 1), {cfg.l_v, cfg.d_v}) : Tensor();
    preds.push_back(forward(model, w, v));
  }
  return concat(preds, 0);
}

Tensor l1_loss(const Tensor& preds, const Tensor& labels) {
  if (preds.numel() != labels.numel() || preds.numel() == 0) {
    throw ShapeError("l1_loss: " + std::to_string(preds.numel()) + " predictions vs " +
                     std::to_string(labels.numel()) + " labels");
  }
  return mean(abs(sub(reshape(preds, {preds.numel()}), reshape(labels, {labels.numel()}))));
}

}  // namespace transfusion
