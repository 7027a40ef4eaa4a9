#include "vtp/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace vtp {

namespace {

bool intersects(const std::set<int>& a, const std::set<int>& b) {
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib)
      ++ia;
    else if (*ib < *ia)
      ++ib;
    else
      return true;
  }
  return false;
}

bool shares(const NarrationSample& a, const NarrationSample& b,
            PositiveRule rule) {
  const bool noun = intersects(a.nouns, b.nouns);
  const bool verb = intersects(a.verbs, b.verbs);
  return rule == PositiveRule::Or ? (noun || verb) : (noun && verb);
}

}  // namespace

std::vector<std::uint8_t> build_positive_mask(
    const std::vector<NarrationSample>& narrations, PositiveRule rule) {
  const std::size_t n = narrations.size();
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k)
      mask[i * n + k] =
          (i == k || shares(narrations[i], narrations[k], rule)) ? 1 : 0;
  return mask;
}

std::vector<std::uint8_t> build_cross_positive_mask(
    const std::vector<NarrationSample>& rows,
    const std::vector<NarrationSample>& cols, PositiveRule rule) {
  std::vector<std::uint8_t> mask(rows.size() * cols.size(), 0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < cols.size(); ++k)
      mask[i * cols.size() + k] = shares(rows[i], cols[k], rule) ? 1 : 0;
  return mask;
}

std::vector<std::size_t> sample_scene_negatives(
    const std::vector<std::size_t>& batch_indices, const Corpus& corpus,
    Rng& rng) {
  std::vector<std::size_t> negatives;
  negatives.reserve(batch_indices.size());
  for (std::size_t idx : batch_indices) {
    const int scenario = corpus.at(idx).clip.scenario_id;
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < corpus.size(); ++j)
      if (j != idx && corpus[j].clip.scenario_id == scenario)
        candidates.push_back(j);
    if (candidates.empty())
      throw ContractError("scene negatives: scenario " +
                          std::to_string(scenario) +
                          " has a single member; need >= 2 clips");
    negatives.push_back(candidates[rng.uniform_int(candidates.size())]);
  }
  return negatives;
}

std::vector<std::size_t> sample_scene_negatives(
    const std::vector<std::size_t>& batch_indices, const Corpus& corpus,
    std::uint64_t seed) {
  Rng rng(seed);
  return sample_scene_negatives(batch_indices, corpus, rng);
}

BatchPlan make_batch_plan(const std::vector<std::size_t>& batch_indices,
                          const Corpus& corpus, PositiveRule rule, Rng& rng,
                          bool with_scene_negatives) {
  BatchPlan plan;
  plan.base_indices = batch_indices;
  std::vector<NarrationSample> base;
  base.reserve(batch_indices.size());
  for (std::size_t idx : batch_indices) base.push_back(corpus.at(idx).narration);
  plan.positive_mask = build_positive_mask(base, rule);
  if (with_scene_negatives) {
    plan.scene_negative_indices =
        sample_scene_negatives(batch_indices, corpus, rng);
    std::vector<NarrationSample> augmented;
    augmented.reserve(plan.scene_negative_indices.size());
    for (std::size_t idx : plan.scene_negative_indices)
      augmented.push_back(corpus.at(idx).narration);
    plan.augmented_positive_mask =
        build_cross_positive_mask(augmented, base, rule);
  }
  return plan;
}

Tensor contrastive_loss(const Tensor& video_embeds, const Tensor& text_embeds,
                        const BatchPlan& plan, double tau) {
  if (tau <= 0) throw ConfigError("contrastive_loss: tau must be > 0");
  const std::size_t n = plan.batch_size();
  const std::size_t rows = plan.has_scene_negatives() ? 2 * n : n;
  if (video_embeds.rank() != 2 || text_embeds.rank() != 2 ||
      video_embeds.shape()[0] != rows || text_embeds.shape()[0] != rows ||
      video_embeds.shape()[1] != text_embeds.shape()[1])
    throw ShapeError("contrastive_loss: embedding stacks must both be [" +
                     std::to_string(rows) + ", p]");

  auto check_unit = [&](const Tensor& m, const char* side) {
    const std::size_t p = m.shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < p; ++c) {
        const double v = m.values()[r * p + c];
        sq += v * v;
      }
      if (std::abs(std::sqrt(sq) - 1.0) > 1e-6)
        throw ContractError(std::string("contrastive_loss: ") + side + " row " +
                            std::to_string(r) + " is not unit-norm");
    }
  };
  check_unit(video_embeds, "video");
  check_unit(text_embeds, "text");

  // Positive columns live among the base N; denominators cover all columns.
  std::vector<std::uint8_t> num_mask(rows * rows, 0);
  std::vector<std::uint8_t> den_mask(rows * rows, 1);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint8_t bit =
          i < n ? plan.positive_mask[i * n + k]
                : plan.augmented_positive_mask[(i - n) * n + k];
      num_mask[i * rows + k] = bit;
    }

  Tensor sim = scale(matmul(video_embeds, transpose2d(text_embeds)), 1.0 / tau);
  Tensor v2t = masked_lse_ratio_loss(sim, num_mask, den_mask);
  Tensor t2v = masked_lse_ratio_loss(transpose2d(sim), num_mask, den_mask);
  return add(v2t, t2v);
}

MaskedText mask_tokens(const NarrationSample& narration, const Lexicon& lexicon,
                       std::size_t vocab_size, Rng& rng, double p) {
  if (p < 0.0 || p > 1.0)
    throw ConfigError("mask_tokens: p must lie in [0,1]");
  MaskedText out;
  out.tokens = narration.tokens;
  for (std::size_t i = 0; i < narration.tokens.size(); ++i) {
    if (!narration.pad_mask[i]) continue;
    const int id = narration.tokens[i];
    if (id == lexicon.cls_id) continue;
    if (rng.uniform() >= p) continue;
    out.positions.push_back(static_cast<int>(i));
    out.targets.push_back(id);
    const double u = rng.uniform();
    if (u < 0.8)
      out.tokens[i] = lexicon.mask_id;
    else if (u < 0.9)
      out.tokens[i] = static_cast<int>(rng.uniform_int(vocab_size));
    // remaining 10%: left unchanged
  }
  return out;
}

MaskedText mask_tokens(const NarrationSample& narration, const Lexicon& lexicon,
                       std::size_t vocab_size, std::uint64_t seed, double p) {
  Rng rng(seed);
  return mask_tokens(narration, lexicon, vocab_size, rng, p);
}

Tensor mlm_loss(const Model& model, const Tensor& fused_text_tokens,
                const std::vector<int>& positions,
                const std::vector<int>& targets) {
  if (positions.size() != targets.size())
    throw ContractError("mlm_loss: positions/targets length mismatch");
  if (positions.empty()) return Tensor::from_values({1}, {0.0});
  return cross_entropy(model.vocab_logits(fused_text_tokens, positions),
                       targets);
}

namespace {

std::size_t draw_weighted(const std::vector<std::size_t>& candidates,
                          const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    acc += weights[i];
    if (u < acc) return candidates[i];
  }
  return candidates.back();
}

}  // namespace

HardNegatives sample_hard_negatives(const std::vector<double>& similarity,
                                    std::size_t n,
                                    const std::vector<std::uint8_t>& positive_mask,
                                    double tau, Rng& rng) {
  if (similarity.size() != n * n || positive_mask.size() != n * n)
    throw ShapeError("sample_hard_negatives: similarity and mask must be NxN");
  if (n < 2)
    throw ContractError("sample_hard_negatives: need at least two samples");

  HardNegatives out;
  auto sample_line = [&](std::size_t fixed, bool row) {
    std::vector<std::size_t> candidates;
    std::vector<double> sims;
    for (std::size_t other = 0; other < n; ++other) {
      if (other == fixed) continue;
      const std::size_t i = row ? fixed : other;
      const std::size_t j = row ? other : fixed;
      if (positive_mask[i * n + j]) continue;
      candidates.push_back(other);
      sims.push_back(similarity[i * n + j]);
    }
    if (candidates.empty()) {
      // Every mismatched candidate is a concept-sharing positive; fall back
      // to a uniform draw so the matching pass still gets a mismatched pair.
      out.warnings.push_back(std::string(row ? "video " : "text ") +
                             std::to_string(fixed) +
                             ": all candidates positive, uniform fallback");
      std::size_t pick = rng.uniform_int(n - 1);
      if (pick >= fixed) ++pick;
      return pick;
    }
    double mx = sims[0];
    for (double s : sims) mx = std::max(mx, s);
    std::vector<double> weights(sims.size());
    for (std::size_t i = 0; i < sims.size(); ++i)
      weights[i] = std::exp((sims[i] - mx) / tau);
    return draw_weighted(candidates, weights, rng);
  };

  for (std::size_t i = 0; i < n; ++i)
    out.text_for_video.push_back(sample_line(i, true));
  for (std::size_t j = 0; j < n; ++j)
    out.video_for_text.push_back(sample_line(j, false));
  return out;
}

HardNegatives sample_hard_negatives(const std::vector<double>& similarity,
                                    std::size_t n,
                                    const std::vector<std::uint8_t>& positive_mask,
                                    double tau, std::uint64_t seed) {
  Rng rng(seed);
  return sample_hard_negatives(similarity, n, positive_mask, tau, rng);
}

Tensor vtm_loss(const Model& model,
                const std::vector<std::pair<Tensor, Tensor>>& cls_pairs,
                const std::vector<double>& labels) {
  if (cls_pairs.size() != labels.size())
    throw ContractError("vtm_loss: one label per pair required");
  if (cls_pairs.empty()) return Tensor::from_values({1}, {0.0});
  std::vector<Tensor> logits;
  logits.reserve(cls_pairs.size());
  for (const auto& [video_cls, text_cls] : cls_pairs)
    logits.push_back(model.vtm_logit(video_cls, text_cls));
  return bce_with_logits(concat(logits, 0), labels);
}

Tensor total_loss(const Tensor& l_contrastive, const Tensor& l_mlm,
                  const Tensor& l_vtm, const LossWeights& weights) {
  weights.validate();
  return add(add(scale(l_contrastive, weights.contrastive_weight()),
                 scale(l_mlm, weights.gamma)),
             scale(l_vtm, weights.delta));
}

}  // namespace vtp
