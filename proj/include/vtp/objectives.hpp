#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/model.hpp"
#include "vtp/rng.hpp"
#include "vtp/tensor.hpp"

namespace vtp {

// Index structure of one augmented training batch: N base pairs plus N
// same-scenario negatives, and the noun/verb positive-pair masks.
struct BatchPlan {
  std::vector<std::size_t> base_indices;
  // Empty when the batch carries no scene negatives; otherwise entry j is a
  // different corpus clip sharing base j's scenario.
  std::vector<std::size_t> scene_negative_indices;
  // N x N row-major over base narrations; diagonal always true.
  std::vector<std::uint8_t> positive_mask;
  // N x N rows = scene-negative narrations, cols = base narrations. Rows may
  // be empty: an augmented sample need not share concepts with any base one.
  std::vector<std::uint8_t> augmented_positive_mask;
  std::uint64_t seed = 0;

  std::size_t batch_size() const { return base_indices.size(); }
  bool has_scene_negatives() const { return !scene_negative_indices.empty(); }
};

// mask[i][k] = (i == k) or the sharing rule between narrations i and k:
// Or  -> a common noun or a common verb
// And -> a common noun and a common verb
std::vector<std::uint8_t> build_positive_mask(
    const std::vector<NarrationSample>& narrations, PositiveRule rule);

// Row narrations vs column narrations under the same rule, no forced diagonal.
std::vector<std::uint8_t> build_cross_positive_mask(
    const std::vector<NarrationSample>& rows,
    const std::vector<NarrationSample>& cols, PositiveRule rule);

// Uniform pick of a different clip with the same scenario_id, per batch entry.
std::vector<std::size_t> sample_scene_negatives(
    const std::vector<std::size_t>& batch_indices, const Corpus& corpus,
    Rng& rng);
std::vector<std::size_t> sample_scene_negatives(
    const std::vector<std::size_t>& batch_indices, const Corpus& corpus,
    std::uint64_t seed);

BatchPlan make_batch_plan(const std::vector<std::size_t>& batch_indices,
                          const Corpus& corpus, PositiveRule rule, Rng& rng,
                          bool with_scene_negatives = true);

// Contrastive alignment loss over stacked embeddings. With scene negatives
// the stacks hold 2N rows (base then augmented); without them N rows. Every
// row must be unit-norm. Both retrieval directions are averaged over all
// rows with a non-empty positive set; positives and denominator terms follow
// the augmented-batch structure (positives among base columns, denominators
// over every column). Returns the negated objective, so 0 is the floor.
Tensor contrastive_loss(const Tensor& video_embeds, const Tensor& text_embeds,
                        const BatchPlan& plan, double tau);

struct MaskedText {
  std::vector<int> tokens;     // masked sequence, same length as input
  std::vector<int> positions;  // selected positions (ascending)
  std::vector<int> targets;    // original ids at those positions
};

// BERT-style corruption: each real non-CLS token independently selected with
// probability p; selected tokens become MASK 80% of the time, a uniform
// random vocab id 10%, and stay unchanged 10%. Targets cover every selected
// position, including unchanged ones.
MaskedText mask_tokens(const NarrationSample& narration, const Lexicon& lexicon,
                       std::size_t vocab_size, Rng& rng, double p = 0.15);
MaskedText mask_tokens(const NarrationSample& narration, const Lexicon& lexicon,
                       std::size_t vocab_size, std::uint64_t seed,
                       double p = 0.15);

// Mean token-level cross-entropy through the vocabulary head; 0 when no
// positions were selected.
Tensor mlm_loss(const Model& model, const Tensor& fused_text_tokens,
                const std::vector<int>& positions,
                const std::vector<int>& targets);

struct HardNegatives {
  std::vector<std::size_t> text_for_video;  // entry i: batch index of the text
  std::vector<std::size_t> video_for_text;  // entry j: batch index of the video
  std::vector<std::string> warnings;        // uniform-fallback records
};

// Softmax(sim/tau) sampling of mismatched pairs over off-diagonal,
// non-positive candidates; rows give a hard text per video, columns a hard
// video per text. Falls back to uniform (with a warning record) when the
// positive mask excludes every candidate.
HardNegatives sample_hard_negatives(const std::vector<double>& similarity,
                                    std::size_t n,
                                    const std::vector<std::uint8_t>& positive_mask,
                                    double tau, Rng& rng);
HardNegatives sample_hard_negatives(const std::vector<double>& similarity,
                                    std::size_t n,
                                    const std::vector<std::uint8_t>& positive_mask,
                                    double tau, std::uint64_t seed);

// Mean binary cross-entropy of match logits for (video cls, text cls) pairs.
Tensor vtm_loss(const Model& model,
                const std::vector<std::pair<Tensor, Tensor>>& cls_pairs,
                const std::vector<double>& labels);

// (1 - gamma - delta) * contrastive + gamma * mlm + delta * vtm.
Tensor total_loss(const Tensor& l_contrastive, const Tensor& l_mlm,
                  const Tensor& l_vtm, const LossWeights& weights);

}  // namespace vtp
