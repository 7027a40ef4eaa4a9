#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vtp/errors.hpp"
#include "vtp/tensor.hpp"

namespace vtp {

// Architectural hyperparameters shared by both towers.
struct ModelConfig {
  std::size_t n_layers = 4;   // depth N of each backbone
  std::size_t n_fused = 2;    // top M layers carrying cross-attention
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t frames = 4;     // T
  std::size_t patch_size = 8;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 16;
  std::vector<std::size_t> projector_dims = {64, 64, 64};
  std::size_t ffn_mult = 4;
  // Composition switches. Defaults follow the printed layer equations and
  // pre-normalization; the flags restore the conventional forms.
  bool residual_from_xhat = false;
  bool post_norm = false;
  bool learnable_alpha = true;
  Precision precision = Precision::F64;

  std::size_t patches_per_frame() const {
    const std::size_t side = image_size / patch_size;
    return side * side;
  }
  std::size_t video_tokens() const { return frames * patches_per_frame() + 1; }
  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t ffn_dim() const { return d_model * ffn_mult; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  void validate() const;
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double peak_lr_backbone = 3e-4;
  double peak_lr_crossattn = 12e-4;
  double peak_lr_heads = 12e-4;
  std::size_t warmup_epochs = 2;
  double end_lr = 1e-7;
  std::array<double, 2> betas = {0.9, 0.98};
  double eps = 1e-8;
  double weight_decay = 1e-2;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class PositiveRule { And, Or };

// Loss mixture (1-gamma-delta, gamma, delta) and contrastive temperature.
struct LossWeights {
  double tau = 0.05;
  double gamma = 0.25;
  double delta = 0.5;
  PositiveRule positive_rule = PositiveRule::And;

  double contrastive_weight() const { return 1.0 - gamma - delta; }
  void validate() const;
};

struct Paths {
  std::string corpus;
  std::string checkpoint;
  std::string output;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  Paths paths;
  std::uint64_t seed = 7;

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& config);

// FNV-1a over the canonical JSON form; identifies a configuration in
// checkpoint metadata.
std::uint64_t config_hash(const RunConfig& config);

std::string positive_rule_name(PositiveRule rule);
PositiveRule positive_rule_from(const std::string& name);

}  // namespace vtp
