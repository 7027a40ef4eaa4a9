#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/model.hpp"
#include "vtp/rng.hpp"

namespace vtp {

// --------------------------------------------------------------------------
// Retrieval

// Cosine scores of unit-norm dual embeddings; row i = query text i,
// column j = gallery clip j.
std::vector<double> retrieve_dual(const Model& model,
                                  const std::vector<NarrationSample>& queries,
                                  const std::vector<ClipSample>& gallery);

// Match probabilities through the fused towers and the matching head.
std::vector<double> retrieve_fused(const Model& model,
                                   const std::vector<NarrationSample>& queries,
                                   const std::vector<ClipSample>& gallery);

// Elementwise sum of the two score families. When `minmax_normalize` is set,
// each family is first rescaled to [0,1] over the whole matrix.
std::vector<double> retrieve_ensemble(const std::vector<double>& dual_scores,
                                      const std::vector<double>& fused_scores,
                                      bool minmax_normalize = false);

struct RetrievalMetrics {
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
  double median_rank = 0.0;
};

// Text->video retrieval metrics with the diagonal as ground truth.
RetrievalMetrics retrieval_metrics(const std::vector<double>& scores,
                                   std::size_t n_queries,
                                   std::size_t n_gallery);

// --------------------------------------------------------------------------
// Multiple-choice evaluation

enum class McqKind { Inter, Intra };

struct McqItem {
  NarrationSample query;
  std::string query_clip_id;
  std::vector<ClipSample> candidates;  // exactly 5
  std::size_t answer_index = 0;
  McqKind kind = McqKind::Inter;
};

struct McqAccuracy {
  double inter = 0.0;
  double intra = 0.0;
  std::size_t inter_count = 0;
  std::size_t intra_count = 0;
};

using McqScorer = std::function<std::vector<double>(const McqItem&)>;

McqScorer make_dual_scorer(const Model& model);
McqScorer make_fused_scorer(const Model& model);
McqScorer make_ensemble_scorer(const Model& model,
                               bool minmax_normalize = false);

// Argmax accuracy per kind; score ties resolve to the lowest index.
McqAccuracy eval_mcq(const std::vector<McqItem>& items, const McqScorer& scorer);

// Builds evaluation items from a corpus slice. Inter items draw distractors
// from other scenarios; intra items draw them from the query's scenario
// (which therefore needs at least 5 clips in the pool).
std::vector<McqItem> make_mcq_items(const Corpus& corpus,
                                    const std::vector<std::size_t>& pool,
                                    std::size_t per_kind, Rng& rng);

void save_mcq_jsonl(const std::string& path, const std::vector<McqItem>& items);
std::vector<McqItem> load_mcq_jsonl(const std::string& path,
                                    const Corpus& corpus);

// --------------------------------------------------------------------------
// Kernel temporal segmentation

struct KtsResult {
  std::vector<std::size_t> boundaries;  // segment start indices, strictly
                                        // increasing, excluding 0
  std::size_t segments = 1;
  double objective = 0.0;  // total scatter + penalty_c * k * ln(n)
};

// Dynamic-programming change-point detection minimizing within-segment
// scatter under the inner-product kernel of unit-normalized features, with
// a penalty of penalty_c * k * ln(n) on the segment count k <= max_segments.
KtsResult kts_segment(const std::vector<std::vector<double>>& features,
                      std::size_t max_segments, double penalty_c);

// --------------------------------------------------------------------------
// Query-focused summarization

// Maximum-weight bipartite matching total for a dense nonnegative weight
// matrix (rows x cols); unmatched vertices contribute zero.
double max_weight_matching(const std::vector<double>& weights, std::size_t rows,
                           std::size_t cols);

struct QfvsMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double matched_weight = 0.0;
};

// Concept-level F1: bipartite matching between selected and reference clips
// with edge weight |concept intersection|; precision and recall divide the
// matched weight by each side's total concept count.
QfvsMetrics qfvs_f1(const std::vector<std::set<int>>& selected_concepts,
                    const std::vector<std::set<int>>& reference_concepts);

struct QfvsTask {
  std::vector<ClipSample> clips;  // consecutive 5-second clips
  std::vector<std::string> clip_ids;
  NarrationSample query;
  std::pair<int, int> concepts;  // lexicon noun ids
  std::vector<std::set<int>> annotations;  // per-clip concept sets
  double budget_fraction = 0.02;
  int template_id = 0;
};

// Deterministic prompt table over concept pairs; template_id < 10.
std::string render_prompt(const std::pair<int, int>& concepts, int template_id);

// Single-layer transformer head scoring clips within a segment.
class QfvsHead {
 public:
  QfvsHead(const ModelConfig& config, std::uint64_t seed);
  // [n, d] clip representations -> [n] relevance logits.
  Tensor scores(const Tensor& clip_reps) const;
  ParamRegistry& params() { return params_; }

 private:
  ParamRegistry params_;
  LayerNormParams ln_attn_, ln_ffn_;
  AttentionParams attn_;
  FfnParams ffn_;
  Tensor score_weight_, score_bias_;
};

struct QfvsOptions {
  std::size_t max_segments = 8;
  double penalty_c = 1.0;
};

// Pipeline stages (a)-(d): unfused bottom stacks embed clips and query, the
// clip features are segmented, each segment's clips run through the fused
// top with the query, and the head scores clips within their segment.
// Backbone passes run without gradients; head gradients flow when a tape is
// active.
Tensor qfvs_clip_logits(const QfvsTask& task, const Model& model,
                        const QfvsHead& head, const QfvsOptions& options);

// Stage (e): indices of the top budget_fraction clips by score (at least
// one; ties resolve to the earlier clip), in ascending order.
std::vector<std::size_t> qfvs_summarize(const QfvsTask& task, const Model& model,
                                        const QfvsHead& head,
                                        const QfvsOptions& options);

// Head-tuning on frozen backbones with per-clip concept-overlap labels.
void train_qfvs_head(const Model& model, QfvsHead& head,
                     const std::vector<QfvsTask>& tasks, std::size_t epochs,
                     double lr, const QfvsOptions& options, std::uint64_t seed);

void save_qfvs_jsonl(const std::string& path, const std::vector<QfvsTask>& tasks);
std::vector<QfvsTask> load_qfvs_jsonl(const std::string& path,
                                      const Corpus& corpus,
                                      std::size_t max_text_len);

// Builds planted-concept tasks from a corpus: clips ordered by scenario,
// queries drawn from noun pairs present in the corpus, budget matched to the
// number of relevant clips.
std::vector<QfvsTask> make_qfvs_tasks(const Corpus& corpus, std::size_t n_tasks,
                                      std::size_t max_text_len, Rng& rng);

}  // namespace vtp
