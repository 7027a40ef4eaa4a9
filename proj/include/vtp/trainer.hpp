#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/model.hpp"
#include "vtp/objectives.hpp"
#include "vtp/rng.hpp"

namespace vtp {

struct LrRates {
  double backbone = 0.0, crossattn = 0.0, heads = 0.0;
  double for_group(ParamGroup g) const {
    switch (g) {
      case ParamGroup::Backbone: return backbone;
      case ParamGroup::CrossAttention: return crossattn;
      default: return heads;
    }
  }
};

// Linear 0 -> peak over the warmup steps, then linear peak -> end_lr over
// the remainder; evaluated per parameter group.
LrRates lr_schedule(std::size_t step, std::size_t total_steps,
                    std::size_t warmup_steps, const TrainConfig& config);

// Decoupled-weight-decay Adam over a parameter registry. Parameters without
// gradients (fixed gates) are left untouched.
class AdamW {
 public:
  AdamW(ParamRegistry& params, const TrainConfig& config);

  void step(const LrRates& rates);

  std::size_t steps_taken() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::size_t t, std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v);

 private:
  ParamRegistry* params_;
  TrainConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct StepRecord {
  std::size_t step = 0;
  double l_contrastive = 0.0, l_mlm = 0.0, l_vtm = 0.0, total = 0.0;
  LrRates rates;
};

// Pre-training driver implementing the three-pass step: (1) dual-mode
// contrastive pass over the augmented batch, (2) fused pass on masked text
// for MLM, (3) fused passes on matched and hard-negative pairs for VTM; one
// backward over the weighted total and one optimizer update per step.
class Trainer {
 public:
  Trainer(Model& model, const RunConfig& config, const Corpus& corpus,
          std::vector<std::size_t> train_indices);

  StepRecord train_step(const std::vector<std::size_t>& batch_indices,
                        const BatchPlan& plan);

  // Runs epochs [epoch(), stop_after_epoch) of the configured schedule.
  void run(std::optional<std::size_t> stop_after_epoch = std::nullopt);

  std::size_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;
  const std::vector<StepRecord>& history() const { return history_; }
  Rng& rng() { return rng_; }
  std::string history_csv() const;

  void save_checkpoint(const std::string& path) const;
  // Restores parameters, optimizer state, rng and history. The stored config
  // hash must match `config_`; on mismatch both hashes are reported.
  void load_checkpoint(const std::string& path);

  BatchPlan plan_batch(const std::vector<std::size_t>& batch_indices);

 private:
  Model& model_;
  RunConfig config_;
  const Corpus& corpus_;
  std::vector<std::size_t> train_indices_;
  AdamW optimizer_;
  Rng rng_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::vector<StepRecord> history_;
};

// Writes the loss history as CSV: step, the three component losses, the
// total, and the per-group learning rates.
void write_history_csv(const std::string& path,
                       const std::vector<StepRecord>& history);

// Parameter names present in a checkpoint archive.
std::vector<std::string> checkpoint_param_names(const std::string& path);

// Restores model parameters from a checkpoint (optimizer state ignored);
// refuses on a config-hash mismatch, reporting both hashes.
void load_model_params(Model& model, const RunConfig& config,
                       const std::string& path);

}  // namespace vtp
