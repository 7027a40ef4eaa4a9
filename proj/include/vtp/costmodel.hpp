#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/model.hpp"

namespace vtp {

enum class CostVariant { Dual, InBackbone, Stacked };

std::string cost_variant_name(CostVariant variant);

struct CostReport {
  CostVariant variant = CostVariant::Dual;
  std::size_t n_fusion_layers = 0;
  std::uint64_t params = 0;
  std::uint64_t macs_per_instance = 0;
  std::vector<std::pair<std::string, std::uint64_t>> param_breakdown;
  std::vector<std::pair<std::string, std::uint64_t>> mac_breakdown;
};

// Closed-form parameter count. All variants share the dual towers,
// projectors and the two loss heads; in_backbone adds a gated cross-attention
// block per fused layer per tower, the stacked variant adds full fusion
// layers (self-attention + cross-attention + feed-forward over the video
// tokens with text context) on top of the dual towers.
std::uint64_t count_params(const ModelConfig& config, CostVariant variant);

// Closed-form multiply-accumulate count for one forward pass at the given
// sequence lengths. Counts linear projections and attention contractions
// only, mirroring the instrumented tensor contractions exactly.
std::uint64_t count_macs(const ModelConfig& config, CostVariant variant,
                         std::size_t video_tokens, std::size_t text_tokens);

CostReport cost_report(const ModelConfig& config, CostVariant variant);

// Forward-only stacked-fusion block used to verify the stacked cost model;
// not part of the trainable artifact.
class StackedFusion {
 public:
  StackedFusion(const ModelConfig& config, std::uint64_t seed);
  Tensor forward(const Tensor& video_tokens, const Tensor& text_tokens,
                 const std::vector<std::uint8_t>& pad_mask) const;
  ParamRegistry& params() { return params_; }

 private:
  struct Layer {
    LayerNormParams ln_attn, ln_ffn;
    AttentionParams attn;
    GatedCrossAttention cross;
    FfnParams ffn;
  };
  ModelConfig config_;
  ParamRegistry params_;
  std::vector<Layer> layers_;
};

// Runs one forward pass of the given variant with the contraction counter
// active and returns the tally. Single-threaded by contract.
std::uint64_t instrumented_forward(const Model& model, CostVariant variant,
                                   const Tensor& frames,
                                   const NarrationSample& narration,
                                   const StackedFusion* stacked = nullptr);

// Plain-text table matching the comparison layout: variant, fusion layers,
// parameters, MACs.
std::string cost_table(const ModelConfig& config,
                       const std::vector<CostVariant>& variants);

}  // namespace vtp
