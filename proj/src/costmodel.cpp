#include "vtp/costmodel.hpp"

#include <iomanip>
#include <sstream>

namespace vtp {

std::string cost_variant_name(CostVariant variant) {
  switch (variant) {
    case CostVariant::Dual: return "dual";
    case CostVariant::InBackbone: return "in_backbone";
    default: return "stacked";
  }
}

namespace {

std::uint64_t u(std::size_t v) { return static_cast<std::uint64_t>(v); }

std::uint64_t attention_params(std::size_t d) { return u(4) * (d * d + d); }

std::uint64_t ffn_params(std::size_t d, std::size_t d_ff) {
  return u(d) * d_ff + d_ff + u(d_ff) * d + d;
}

std::uint64_t layer_norm_params(std::size_t d) { return u(2) * d; }

std::uint64_t projector_params(std::size_t d,
                               const std::vector<std::size_t>& dims) {
  std::uint64_t total = 0;
  std::size_t in = d;
  for (std::size_t out : dims) {
    total += u(in) * out + out;
    in = out;
  }
  return total;
}

std::uint64_t cross_attention_block_params(std::size_t d) {
  // query norm + context norm + projections + gate scalar
  return 2 * layer_norm_params(d) + attention_params(d) + 1;
}

std::uint64_t projector_macs(std::size_t d,
                             const std::vector<std::size_t>& dims) {
  std::uint64_t total = 0;
  std::size_t in = d;
  for (std::size_t out : dims) {
    total += u(in) * out;
    in = out;
  }
  return total;
}

// Attention MACs for B sequences of n_q queries over n_k keys at width d:
// four projections plus the two score/value contractions.
std::uint64_t attention_macs(std::size_t b, std::size_t n_q, std::size_t n_k,
                             std::size_t d) {
  const std::uint64_t proj =
      u(b) * (2 * n_q + 2 * n_k) * d * d;  // q,o on queries; k,v on keys
  const std::uint64_t contraction = u(2) * b * n_q * n_k * d;
  return proj + contraction;
}

}  // namespace

std::uint64_t count_params(const ModelConfig& config, CostVariant variant) {
  const std::size_t d = config.d_model;
  const std::size_t S = config.patches_per_frame();
  const std::size_t dff = config.ffn_dim();

  std::uint64_t video = 0;
  video += u(config.patch_dim()) * d + d;  // patch projection
  video += d;                              // classification token
  video += u(S + 1) * d + u(config.frames) * d;  // position tables
  const std::uint64_t video_layer = 2 * (layer_norm_params(d) +
                                         attention_params(d)) +
                                    layer_norm_params(d) + ffn_params(d, dff);
  video += u(config.n_layers) * video_layer;
  video += layer_norm_params(d);
  video += projector_params(d, config.projector_dims);

  std::uint64_t text = 0;
  text += u(config.vocab_size) * d + u(config.max_text_len) * d;
  const std::uint64_t text_layer = layer_norm_params(d) + attention_params(d) +
                                   layer_norm_params(d) + ffn_params(d, dff);
  text += u(config.n_layers) * text_layer;
  text += layer_norm_params(d);
  text += projector_params(d, config.projector_dims);

  const std::uint64_t heads =
      (u(d) * config.vocab_size + config.vocab_size) + (u(2) * d + 1);

  std::uint64_t total = video + text + heads;
  if (variant == CostVariant::InBackbone)
    total += u(2) * config.n_fused * cross_attention_block_params(d);
  if (variant == CostVariant::Stacked) {
    // Full fusion layer: self-attention + cross-attention block + FFN, with
    // a pre-norm per sublayer.
    const std::uint64_t stacked_layer =
        layer_norm_params(d) + attention_params(d) +   // self-attention
        cross_attention_block_params(d) +              // cross-attention
        layer_norm_params(d) + ffn_params(d, dff);     // feed-forward
    total += u(config.n_fused) * stacked_layer;
  }
  return total;
}

std::uint64_t count_macs(const ModelConfig& config, CostVariant variant,
                         std::size_t video_tokens, std::size_t text_tokens) {
  const std::size_t d = config.d_model;
  const std::size_t S = config.patches_per_frame();
  const std::size_t T = config.frames;
  const std::size_t dff = config.ffn_dim();
  const std::size_t L = text_tokens;
  if (video_tokens != T * S + 1)
    throw ContractError("count_macs: video token count must equal T*S+1");

  std::uint64_t video = u(T) * S * config.patch_dim() * d;  // patch projection
  const std::uint64_t temporal = attention_macs(S, T, T, d);
  const std::uint64_t spatial = attention_macs(T, S + 1, S + 1, d);
  const std::uint64_t video_ffn = u(2) * (T * S + 1) * d * dff;
  video += u(config.n_layers) * (temporal + spatial + video_ffn);
  video += projector_macs(d, config.projector_dims);

  std::uint64_t text = 0;
  const std::uint64_t text_sa = attention_macs(1, L, L, d);
  const std::uint64_t text_ffn = u(2) * L * d * dff;
  text += u(config.n_layers) * (text_sa + text_ffn);
  text += projector_macs(d, config.projector_dims);

  std::uint64_t total = video + text;
  if (variant == CostVariant::InBackbone) {
    const std::uint64_t video_ca = attention_macs(1, video_tokens, L, d);
    const std::uint64_t text_ca = attention_macs(1, L, video_tokens, d);
    total += u(config.n_fused) * (video_ca + text_ca);
  }
  if (variant == CostVariant::Stacked) {
    const std::uint64_t sa = attention_macs(1, video_tokens, video_tokens, d);
    const std::uint64_t ca = attention_macs(1, video_tokens, L, d);
    const std::uint64_t ffn = u(2) * video_tokens * d * dff;
    total += u(config.n_fused) * (sa + ca + ffn);
  }
  return total;
}

CostReport cost_report(const ModelConfig& config, CostVariant variant) {
  CostReport report;
  report.variant = variant;
  report.n_fusion_layers = variant == CostVariant::Dual ? 0 : config.n_fused;
  report.params = count_params(config, variant);
  report.macs_per_instance = count_macs(config, variant, config.video_tokens(),
                                        config.max_text_len);

  const std::uint64_t dual_params = count_params(config, CostVariant::Dual);
  const std::uint64_t dual_macs = count_macs(
      config, CostVariant::Dual, config.video_tokens(), config.max_text_len);
  report.param_breakdown.emplace_back("towers+projectors+heads", dual_params);
  report.mac_breakdown.emplace_back("towers+projectors", dual_macs);
  if (variant != CostVariant::Dual) {
    report.param_breakdown.emplace_back("fusion", report.params - dual_params);
    report.mac_breakdown.emplace_back("fusion",
                                      report.macs_per_instance - dual_macs);
  }
  return report;
}

StackedFusion::StackedFusion(const ModelConfig& config, std::uint64_t seed)
    : config_(config) {
  Rng rng(seed);
  const std::size_t d = config.d_model;
  for (std::size_t k = 0; k < config.n_fused; ++k) {
    const std::string prefix = "stacked.layers." + std::to_string(k);
    Layer layer;
    layer.ln_attn = LayerNormParams(params_, prefix + ".attn.ln", d);
    layer.attn = AttentionParams(params_, prefix + ".attn", d, config.n_heads,
                                 rng);
    layer.cross = GatedCrossAttention(params_, prefix + ".cross_attn", d,
                                      config.n_heads, /*learnable=*/false, rng);
    layer.ln_ffn = LayerNormParams(params_, prefix + ".ffn.ln", d);
    layer.ffn = FfnParams(params_, prefix + ".ffn", d, config.ffn_dim(), rng);
    layers_.push_back(std::move(layer));
  }
  // Ungated layers: the gate scalar exists for parameter parity with the
  // cross-attention block but is pinned to 1.
  for (Parameter& p : params_.all())
    if (p.name.find(".alpha") != std::string::npos)
      p.tensor.mutable_values()[0] = 1.0;
}

Tensor StackedFusion::forward(const Tensor& video_tokens,
                              const Tensor& text_tokens,
                              const std::vector<std::uint8_t>& pad_mask) const {
  const std::vector<double> bias = pad_bias(pad_mask);
  Tensor x = video_tokens;
  for (const Layer& layer : layers_) {
    Tensor normed = layer.ln_attn.apply(x);
    x = add(x, multi_head_attention(layer.attn, normed, normed));
    x = add(x, layer.cross.apply(x, text_tokens, &bias, config_.post_norm));
    x = add(x, layer.ffn.apply(layer.ln_ffn.apply(x)));
  }
  return x;
}

std::uint64_t instrumented_forward(const Model& model, CostVariant variant,
                                   const Tensor& frames,
                                   const NarrationSample& narration,
                                   const StackedFusion* stacked) {
  NoGradScope no_grad;
  macs::begin();
  try {
    switch (variant) {
      case CostVariant::Dual:
        model.dual_forward(frames, narration);
        break;
      case CostVariant::InBackbone:
        model.fused_forward(frames, narration);
        break;
      case CostVariant::Stacked: {
        if (!stacked)
          throw ContractError(
              "instrumented_forward: stacked variant needs a StackedFusion");
        TowerOutputs dual = model.dual_forward(frames, narration);
        stacked->forward(dual.video_tokens, dual.text_tokens,
                         narration.pad_mask);
        break;
      }
    }
  } catch (...) {
    macs::end();
    throw;
  }
  return macs::end();
}

std::string cost_table(const ModelConfig& config,
                       const std::vector<CostVariant>& variants) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "variant" << std::right << std::setw(15)
     << "fusion_layers" << std::setw(16) << "params" << std::setw(20)
     << "macs_per_instance" << "\n";
  for (CostVariant v : variants) {
    const CostReport r = cost_report(config, v);
    os << std::left << std::setw(14) << cost_variant_name(v) << std::right
       << std::setw(15) << r.n_fusion_layers << std::setw(16) << r.params
       << std::setw(20) << r.macs_per_instance << "\n";
  }
  return os.str();
}

}  // namespace vtp
