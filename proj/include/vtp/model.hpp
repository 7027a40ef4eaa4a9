#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/rng.hpp"
#include "vtp/tensor.hpp"

namespace vtp {

enum class ParamGroup { Backbone, CrossAttention, Head };

// Group follows deterministically from the hierarchical name: parameters
// under a ".cross_attn." scope form the cross-attention group, names under
// "heads." the head group, everything else the backbone group.
ParamGroup group_from_name(const std::string& name);

struct Parameter {
  std::string name;
  Tensor tensor;
  ParamGroup group;
};

// Flat, ordered parameter table with unique hierarchical names.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Tensor tensor);
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  bool has(const std::string& name) const;
  void zero_grads();
  std::size_t total_size() const;

 private:
  std::vector<Parameter> params_;
  std::set<std::string> names_;
};

constexpr double kLayerNormEps = 1e-6;
constexpr double kAttentionMaskBias = -1e9;

// --------------------------------------------------------------------------
// Building blocks. Each registers its parameters under a prefix at
// construction; apply methods are pure graph builders.

struct LayerNormParams {
  Tensor gain, bias;
  LayerNormParams() = default;
  LayerNormParams(ParamRegistry& reg, const std::string& prefix, std::size_t d);
  Tensor apply(const Tensor& x) const;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;
  AttentionParams() = default;
  AttentionParams(ParamRegistry& reg, const std::string& prefix, std::size_t d,
                  std::size_t heads, Rng& rng);
};

// Multi-head attention over [B, n_q, d] queries and [B, n_k, d] keys/values
// (2-D inputs are treated as batch 1). `key_bias`, when given, is added to
// every pre-softmax score row; padded key positions carry kAttentionMaskBias.
Tensor multi_head_attention(const AttentionParams& p, const Tensor& queries,
                            const Tensor& keys_values,
                            const std::vector<double>* key_bias = nullptr);

struct FfnParams {
  Tensor w1, b1, w2, b2;
  FfnParams() = default;
  FfnParams(ParamRegistry& reg, const std::string& prefix, std::size_t d,
            std::size_t d_ff, Rng& rng);
  Tensor apply(const Tensor& x) const;
};

struct ProjectorParams {
  std::vector<Tensor> weights, biases;
  ProjectorParams() = default;
  ProjectorParams(ParamRegistry& reg, const std::string& prefix, std::size_t d,
                  const std::vector<std::size_t>& dims, Rng& rng);
  // Pooled token -> MLP with GELU between layers -> unit-norm embedding.
  Tensor apply(const Tensor& pooled) const;
};

// Gated cross-attention block. The gate is a scalar parameter per fused
// layer per tower, initialized exactly 0 at construction.
struct GatedCrossAttention {
  LayerNormParams ln_query, ln_context;
  AttentionParams attn;
  Tensor alpha;
  GatedCrossAttention() = default;
  GatedCrossAttention(ParamRegistry& reg, const std::string& prefix,
                      std::size_t d, std::size_t heads, bool learnable,
                      Rng& rng);
  // alpha * CA(query_tokens, context), with context padding masked.
  Tensor apply(const Tensor& query_tokens, const Tensor& context,
               const std::vector<double>* context_bias, bool post_norm) const;
};

struct VideoLayer {
  LayerNormParams ln_temporal, ln_spatial, ln_ffn;
  AttentionParams temporal_attn, spatial_attn;
  FfnParams ffn;
  std::optional<GatedCrossAttention> cross_attn;
};

struct TextLayer {
  LayerNormParams ln_attn, ln_ffn;
  AttentionParams attn;
  FfnParams ffn;
  std::optional<GatedCrossAttention> cross_attn;
};

enum class FusionMode { Dual, Fused };

struct TowerOutputs {
  Tensor video_tokens;  // [T*S+1, d], after the final norm
  Tensor text_tokens;   // [L, d], after the final norm
  Tensor video_cls;     // [d]
  Tensor text_cls;      // [d]
  Tensor video_embed;   // [p], unit norm
  Tensor text_embed;    // [p], unit norm
};

// Two-tower model: divided space-time attention video encoder and a
// self-attention text encoder, with gated cross-attention inserted into the
// top n_fused layers of both. In dual mode the cross-attention blocks are
// not executed at all; in fused mode each fused depth runs the video layer
// first, then the text layer attending to that video output.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  void zero_grads() { params_.zero_grads(); }

  // Overwrites every gate value; supports the fixed-gate ablation.
  void set_alpha(double value);
  std::vector<double> alpha_values() const;

  // Token embedding stages.
  Tensor embed_video_tokens(const Tensor& frames) const;
  Tensor embed_text_tokens(const std::vector<int>& tokens) const;

  // Bottom (unfused) stacks: layers 1..N-M.
  Tensor video_bottom(const Tensor& frames) const;
  Tensor text_bottom(const std::vector<int>& tokens,
                     const std::vector<std::uint8_t>& pad_mask) const;

  TowerOutputs dual_forward(const Tensor& frames,
                            const NarrationSample& narration) const;
  TowerOutputs fused_forward(const Tensor& frames,
                             const std::vector<int>& tokens,
                             const std::vector<std::uint8_t>& pad_mask) const;
  TowerOutputs fused_forward(const Tensor& frames,
                             const NarrationSample& narration) const;
  // Top M fused layers over precomputed bottom-stack tokens.
  TowerOutputs fused_top(const Tensor& video_tokens, const Tensor& text_tokens,
                         const std::vector<std::uint8_t>& pad_mask) const;

  TowerOutputs forward(const Tensor& frames, const NarrationSample& narration,
                       FusionMode mode) const;

  // Dual-mode pooled embeddings.
  Tensor embed_video(const Tensor& frames) const;
  Tensor embed_text(const NarrationSample& narration) const;

  // Heads.
  Tensor vocab_logits(const Tensor& text_tokens,
                      const std::vector<int>& positions) const;
  Tensor vtm_logit(const Tensor& video_cls, const Tensor& text_cls) const;

  // Single layers, exposed for the oracle tests.
  Tensor space_time_block(std::size_t layer, const Tensor& x) const;
  Tensor text_attention(std::size_t layer, const Tensor& x,
                        const std::vector<std::uint8_t>& pad_mask) const;
  Tensor video_layer_forward(std::size_t layer, const Tensor& x,
                             const Tensor* text_context,
                             const std::vector<double>* text_bias) const;
  Tensor text_layer_forward(std::size_t layer, const Tensor& x,
                            const std::vector<double>* self_bias,
                            const Tensor* video_context) const;

  Tensor project_video(const Tensor& cls) const;
  Tensor project_text(const Tensor& cls) const;

 private:
  TowerOutputs finish(Tensor video_tokens, Tensor text_tokens) const;

  ModelConfig config_;
  ParamRegistry params_;

  Tensor patch_weight_, patch_bias_, cls_token_, pos_spatial_, pos_temporal_;
  std::vector<VideoLayer> video_layers_;
  LayerNormParams video_final_ln_;
  ProjectorParams video_projector_;

  Tensor token_embedding_, pos_text_;
  std::vector<TextLayer> text_layers_;
  LayerNormParams text_final_ln_;
  ProjectorParams text_projector_;

  Tensor vocab_weight_, vocab_bias_;
  Tensor vtm_weight_, vtm_bias_;
};

// Pad-mask to additive pre-softmax bias (0 for real, large negative for pad).
std::vector<double> pad_bias(const std::vector<std::uint8_t>& pad_mask);

}  // namespace vtp
