#include "vtp/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "vtp/trainer.hpp"

namespace vtp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Retrieval

std::vector<double> retrieve_dual(const Model& model,
                                  const std::vector<NarrationSample>& queries,
                                  const std::vector<ClipSample>& gallery) {
  NoGradScope no_grad;
  std::vector<std::vector<double>> text_embeds, video_embeds;
  for (const NarrationSample& q : queries)
    text_embeds.push_back(model.embed_text(q).values());
  for (const ClipSample& g : gallery)
    video_embeds.push_back(model.embed_video(g.frames).values());

  std::vector<double> scores(queries.size() * gallery.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < text_embeds[i].size(); ++c)
        dot += text_embeds[i][c] * video_embeds[j][c];
      scores[i * gallery.size() + j] = dot;
    }
  return scores;
}

std::vector<double> retrieve_fused(const Model& model,
                                   const std::vector<NarrationSample>& queries,
                                   const std::vector<ClipSample>& gallery) {
  NoGradScope no_grad;
  // The query-side bottom stack is reused across the gallery sweep.
  std::vector<Tensor> query_bottom;
  for (const NarrationSample& q : queries)
    query_bottom.push_back(model.text_bottom(q.tokens, q.pad_mask));
  std::vector<Tensor> gallery_bottom;
  for (const ClipSample& g : gallery)
    gallery_bottom.push_back(model.video_bottom(g.frames));

  std::vector<double> scores(queries.size() * gallery.size());
  for (std::size_t i = 0; i < queries.size(); ++i)
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      TowerOutputs fused = model.fused_top(gallery_bottom[j], query_bottom[i],
                                           queries[i].pad_mask);
      const double logit =
          model.vtm_logit(fused.video_cls, fused.text_cls).values()[0];
      scores[i * gallery.size() + j] =
          logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                       : std::exp(logit) / (1.0 + std::exp(logit));
    }
  return scores;
}

namespace {

std::vector<double> minmax(const std::vector<double>& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  std::vector<double> out(v.size());
  const double span = hi - lo;
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = span > 0.0 ? (v[i] - lo) / span : 0.0;
  return out;
}

}  // namespace

std::vector<double> retrieve_ensemble(const std::vector<double>& dual_scores,
                                      const std::vector<double>& fused_scores,
                                      bool minmax_normalize) {
  if (dual_scores.size() != fused_scores.size())
    throw ShapeError("retrieve_ensemble: score matrices differ in size");
  const std::vector<double>& a =
      minmax_normalize ? minmax(dual_scores) : dual_scores;
  const std::vector<double>& b =
      minmax_normalize ? minmax(fused_scores) : fused_scores;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

RetrievalMetrics retrieval_metrics(const std::vector<double>& scores,
                                   std::size_t n_queries,
                                   std::size_t n_gallery) {
  if (scores.size() != n_queries * n_gallery)
    throw ShapeError("retrieval_metrics: score matrix size mismatch");
  std::vector<double> ranks;
  for (std::size_t i = 0; i < n_queries; ++i) {
    const double own = scores[i * n_gallery + i];
    std::size_t rank = 1;
    for (std::size_t j = 0; j < n_gallery; ++j) {
      if (j == i) continue;
      const double s = scores[i * n_gallery + j];
      if (s > own || (s == own && j < i)) ++rank;
    }
    ranks.push_back(static_cast<double>(rank));
  }
  RetrievalMetrics m;
  for (double r : ranks) {
    if (r <= 1) m.r1 += 1;
    if (r <= 5) m.r5 += 1;
    if (r <= 10) m.r10 += 1;
  }
  const double n = static_cast<double>(ranks.size());
  m.r1 /= n;
  m.r5 /= n;
  m.r10 /= n;
  std::sort(ranks.begin(), ranks.end());
  m.median_rank = ranks.size() % 2 ? ranks[ranks.size() / 2]
                                   : 0.5 * (ranks[ranks.size() / 2 - 1] +
                                            ranks[ranks.size() / 2]);
  return m;
}

// ---------------------------------------------------------------------------
// MCQ

McqScorer make_dual_scorer(const Model& model) {
  return [&model](const McqItem& item) {
    NoGradScope no_grad;
    const std::vector<double> q = model.embed_text(item.query).values();
    std::vector<double> out;
    for (const ClipSample& c : item.candidates) {
      const std::vector<double> v = model.embed_video(c.frames).values();
      double dot = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * v[i];
      out.push_back(dot);
    }
    return out;
  };
}

McqScorer make_fused_scorer(const Model& model) {
  return [&model](const McqItem& item) {
    NoGradScope no_grad;
    Tensor query_bottom =
        model.text_bottom(item.query.tokens, item.query.pad_mask);
    std::vector<double> out;
    for (const ClipSample& c : item.candidates) {
      TowerOutputs fused = model.fused_top(model.video_bottom(c.frames),
                                           query_bottom, item.query.pad_mask);
      const double logit =
          model.vtm_logit(fused.video_cls, fused.text_cls).values()[0];
      out.push_back(logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                                 : std::exp(logit) / (1.0 + std::exp(logit)));
    }
    return out;
  };
}

McqScorer make_ensemble_scorer(const Model& model, bool minmax_normalize) {
  McqScorer dual = make_dual_scorer(model);
  McqScorer fused = make_fused_scorer(model);
  return [dual, fused, minmax_normalize](const McqItem& item) {
    return retrieve_ensemble(dual(item), fused(item), minmax_normalize);
  };
}

McqAccuracy eval_mcq(const std::vector<McqItem>& items,
                     const McqScorer& scorer) {
  McqAccuracy acc;
  for (const McqItem& item : items) {
    if (item.candidates.size() != 5)
      throw ContractError("eval_mcq: items must have exactly 5 candidates");
    const std::vector<double> scores = scorer(item);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (scores[i] > scores[best]) best = i;  // ties keep the lowest index
    const bool hit = best == item.answer_index;
    if (item.kind == McqKind::Inter) {
      ++acc.inter_count;
      acc.inter += hit ? 1.0 : 0.0;
    } else {
      ++acc.intra_count;
      acc.intra += hit ? 1.0 : 0.0;
    }
  }
  if (acc.inter_count) acc.inter /= static_cast<double>(acc.inter_count);
  if (acc.intra_count) acc.intra /= static_cast<double>(acc.intra_count);
  return acc;
}

std::vector<McqItem> make_mcq_items(const Corpus& corpus,
                                    const std::vector<std::size_t>& pool,
                                    std::size_t per_kind, Rng& rng) {
  std::map<int, std::vector<std::size_t>> by_scenario;
  for (std::size_t idx : pool)
    by_scenario[corpus.at(idx).clip.scenario_id].push_back(idx);

  std::vector<McqItem> items;
  auto build = [&](McqKind kind) {
    for (std::size_t n = 0; n < per_kind; ++n) {
      const std::size_t q = pool[rng.uniform_int(pool.size())];
      const int scenario = corpus.at(q).clip.scenario_id;
      std::vector<std::size_t> distractor_pool;
      for (std::size_t idx : pool) {
        if (idx == q) continue;
        const bool same = corpus.at(idx).clip.scenario_id == scenario;
        if (kind == McqKind::Intra ? same : !same)
          distractor_pool.push_back(idx);
      }
      if (distractor_pool.size() < 4)
        throw ContractError(
            "make_mcq_items: pool too small for 4 distractors (scenario " +
            std::to_string(scenario) + ")");
      std::vector<std::size_t> picks;
      while (picks.size() < 4) {
        const std::size_t c =
            distractor_pool[rng.uniform_int(distractor_pool.size())];
        if (std::find(picks.begin(), picks.end(), c) == picks.end())
          picks.push_back(c);
      }
      McqItem item;
      item.kind = kind;
      item.query = corpus.at(q).narration;
      item.query_clip_id = corpus.at(q).clip.clip_id;
      item.answer_index = rng.uniform_int(5);
      for (std::size_t slot = 0, d = 0; slot < 5; ++slot)
        item.candidates.push_back(
            corpus.at(slot == item.answer_index ? q : picks[d++]).clip);
      items.push_back(std::move(item));
    }
  };
  build(McqKind::Inter);
  build(McqKind::Intra);
  return items;
}

void save_mcq_jsonl(const std::string& path, const std::vector<McqItem>& items) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  for (const McqItem& item : items) {
    std::vector<std::string> ids;
    for (const ClipSample& c : item.candidates) ids.push_back(c.clip_id);
    json rec = {
        {"kind", item.kind == McqKind::Inter ? "inter" : "intra"},
        {"query_clip_id", item.query_clip_id},
        {"candidate_clip_ids", ids},
        {"answer_index", item.answer_index},
    };
    os << rec.dump() << "\n";
  }
}

std::vector<McqItem> load_mcq_jsonl(const std::string& path,
                                    const Corpus& corpus) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    by_id[corpus[i].clip.clip_id] = i;

  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<McqItem> items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      McqItem item;
      item.kind = rec.at("kind").get<std::string>() == "intra" ? McqKind::Intra
                                                               : McqKind::Inter;
      item.query_clip_id = rec.at("query_clip_id").get<std::string>();
      item.answer_index = rec.at("answer_index").get<std::size_t>();
      item.query = corpus.at(by_id.at(item.query_clip_id)).narration;
      for (const auto& id :
           rec.at("candidate_clip_ids").get<std::vector<std::string>>())
        item.candidates.push_back(corpus.at(by_id.at(id)).clip);
      items.push_back(std::move(item));
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

// ---------------------------------------------------------------------------
// Kernel temporal segmentation

KtsResult kts_segment(const std::vector<std::vector<double>>& features,
                      std::size_t max_segments, double penalty_c) {
  const std::size_t n = features.size();
  if (n < 1) throw ContractError("kts_segment: empty sequence");
  const std::size_t d = features[0].size();

  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (features[i].size() != d)
      throw ShapeError("kts_segment: ragged feature rows");
    double sq = 0.0;
    for (double v : features[i]) sq += v * v;
    const double norm = std::sqrt(sq);
    for (std::size_t c = 0; c < d; ++c)
      x[i][c] = norm > 1e-12 ? features[i][c] / norm : 0.0;
  }

  // Prefix sums give within-segment scatter in O(1):
  // scatter(a,b) = sum_t k(t,t) - |sum_t x_t|^2 / len.
  std::vector<std::vector<double>> prefix(n + 1, std::vector<double>(d, 0.0));
  std::vector<double> prefix_kk(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double kk = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      prefix[i + 1][c] = prefix[i][c] + x[i][c];
      kk += x[i][c] * x[i][c];
    }
    prefix_kk[i + 1] = prefix_kk[i] + kk;
  }
  auto scatter = [&](std::size_t a, std::size_t b) {  // [a, b)
    const double len = static_cast<double>(b - a);
    double sumsq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double s = prefix[b][c] - prefix[a][c];
      sumsq += s * s;
    }
    return (prefix_kk[b] - prefix_kk[a]) - sumsq / len;
  };

  const std::size_t kmax = std::min(max_segments, n);
  const double inf = 1e300;
  // cost[k][j]: minimal scatter splitting the first j items into k segments.
  std::vector<std::vector<double>> cost(kmax + 1,
                                        std::vector<double>(n + 1, inf));
  std::vector<std::vector<std::size_t>> arg(kmax + 1,
                                            std::vector<std::size_t>(n + 1, 0));
  for (std::size_t j = 1; j <= n; ++j) cost[1][j] = scatter(0, j);
  for (std::size_t k = 2; k <= kmax; ++k)
    for (std::size_t j = k; j <= n; ++j)
      for (std::size_t i = k - 1; i < j; ++i) {
        const double c = cost[k - 1][i] + scatter(i, j);
        if (c < cost[k][j]) {
          cost[k][j] = c;
          arg[k][j] = i;
        }
      }

  KtsResult best;
  best.objective = inf;
  const double logn = std::log(static_cast<double>(n));
  for (std::size_t k = 1; k <= kmax; ++k) {
    const double obj = cost[k][n] + penalty_c * static_cast<double>(k) * logn;
    if (obj < best.objective) {
      best.objective = obj;
      best.segments = k;
    }
  }
  std::vector<std::size_t> bounds;
  std::size_t j = n;
  for (std::size_t k = best.segments; k >= 2; --k) {
    bounds.push_back(arg[k][j]);
    j = arg[k][j];
  }
  std::reverse(bounds.begin(), bounds.end());
  best.boundaries = std::move(bounds);
  return best;
}

// ---------------------------------------------------------------------------
// Maximum-weight bipartite matching

namespace {

// Potential-based Hungarian algorithm on a square cost matrix (minimizing).
std::vector<std::size_t> hungarian_min(const std::vector<double>& cost,
                                       std::size_t n) {
  const double inf = 1e18;
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      std::size_t j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j)
        if (!used[j]) {
          const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (std::size_t j = 0; j <= n; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> row_to_col(n, 0);
  for (std::size_t j = 1; j <= n; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace

double max_weight_matching(const std::vector<double>& weights, std::size_t rows,
                           std::size_t cols) {
  if (weights.size() != rows * cols)
    throw ShapeError("max_weight_matching: weight matrix size mismatch");
  if (rows == 0 || cols == 0) return 0.0;
  for (double w : weights)
    if (w < 0.0)
      throw ContractError("max_weight_matching: weights must be nonnegative");
  const std::size_t n = std::max(rows, cols);
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      cost[i * n + j] = -weights[i * cols + j];
  const std::vector<std::size_t> assignment = hungarian_min(cost, n);
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i)
    if (assignment[i] < cols) total += weights[i * cols + assignment[i]];
  return total;
}

QfvsMetrics qfvs_f1(const std::vector<std::set<int>>& selected_concepts,
                    const std::vector<std::set<int>>& reference_concepts) {
  QfvsMetrics m;
  const std::size_t rows = selected_concepts.size();
  const std::size_t cols = reference_concepts.size();
  double selected_total = 0.0, reference_total = 0.0;
  for (const auto& s : selected_concepts)
    selected_total += static_cast<double>(s.size());
  for (const auto& r : reference_concepts)
    reference_total += static_cast<double>(r.size());

  if (rows > 0 && cols > 0) {
    std::vector<double> weights(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        std::size_t inter = 0;
        for (int c : selected_concepts[i])
          inter += reference_concepts[j].count(c);
        weights[i * cols + j] = static_cast<double>(inter);
      }
    m.matched_weight = max_weight_matching(weights, rows, cols);
  }
  m.precision = selected_total > 0.0 ? m.matched_weight / selected_total : 0.0;
  m.recall = reference_total > 0.0 ? m.matched_weight / reference_total : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Prompts

std::string render_prompt(const std::pair<int, int>& concepts,
                          int template_id) {
  const Lexicon& lex = Lexicon::builtin();
  if (!lex.noun_ids.count(concepts.first) ||
      !lex.noun_ids.count(concepts.second))
    throw ContractError("render_prompt: concepts must be lexicon nouns");
  const std::string a = lex.word(concepts.first) + "s";
  const std::string b = lex.word(concepts.second) + "s";
  switch (template_id) {
    case 0: return "All scenes containing " + a + " and " + b;
    case 1: return "Find scenes with " + a + " and " + b;
    case 2: return "Show all moments with " + a + " and " + b;
    case 3: return "Scenes in which " + a + " and " + b + " appear";
    case 4: return "Every scene containing " + a + " and " + b;
    case 5: return "Pick the scenes with " + a + " and " + b;
    case 6: return "Moments where " + a + " and " + b + " are visible";
    case 7: return "Summarize the scenes with " + a + " and " + b;
    case 8: return "All parts showing " + a + " and " + b;
    case 9: return "Collect scenes that contain " + a + " and " + b;
    default:
      throw ContractError("render_prompt: unknown template " +
                          std::to_string(template_id));
  }
}

// ---------------------------------------------------------------------------
// QFVS head and pipeline

QfvsHead::QfvsHead(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = config.d_model;
  ln_attn_ = LayerNormParams(params_, "heads.qfvs.attn.ln", d);
  attn_ = AttentionParams(params_, "heads.qfvs.attn", d, config.n_heads, rng);
  ln_ffn_ = LayerNormParams(params_, "heads.qfvs.ffn.ln", d);
  ffn_ = FfnParams(params_, "heads.qfvs.ffn", d, config.ffn_dim(), rng);
  score_weight_ = params_.add(
      "heads.qfvs.score.weight",
      Tensor::randn({d, 1}, rng, std::sqrt(2.0 / static_cast<double>(d + 1)),
                    true));
  score_bias_ = params_.add("heads.qfvs.score.bias", Tensor::zeros({1}, true));
}

Tensor QfvsHead::scores(const Tensor& clip_reps) const {
  Tensor normed = ln_attn_.apply(clip_reps);
  Tensor x = add(clip_reps, multi_head_attention(attn_, normed, normed));
  x = add(x, ffn_.apply(ln_ffn_.apply(x)));
  return reshape(add(matmul(x, score_weight_), score_bias_),
                 {clip_reps.shape()[0]});
}

namespace {

struct QfvsFeatures {
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // [begin, end)
  std::vector<std::vector<double>> clip_reps;  // fused video cls per clip
};

QfvsFeatures qfvs_features(const QfvsTask& task, const Model& model,
                           const QfvsOptions& options) {
  if (task.clips.empty()) throw ContractError("qfvs: task has no clips");
  NoGradScope no_grad;

  std::vector<Tensor> bottoms;
  std::vector<std::vector<double>> kts_features;
  for (const ClipSample& clip : task.clips) {
    Tensor tokens = model.video_bottom(clip.frames);
    kts_features.push_back(
        std::vector<double>(tokens.values().begin(),
                            tokens.values().begin() +
                                static_cast<std::ptrdiff_t>(
                                    model.config().d_model)));
    bottoms.push_back(std::move(tokens));
  }
  Tensor query_bottom =
      model.text_bottom(task.query.tokens, task.query.pad_mask);

  const KtsResult kts =
      kts_segment(kts_features, options.max_segments, options.penalty_c);

  QfvsFeatures out;
  std::size_t begin = 0;
  for (std::size_t b : kts.boundaries) {
    out.segments.emplace_back(begin, b);
    begin = b;
  }
  out.segments.emplace_back(begin, task.clips.size());

  for (std::size_t i = 0; i < task.clips.size(); ++i) {
    TowerOutputs fused =
        model.fused_top(bottoms[i], query_bottom, task.query.pad_mask);
    out.clip_reps.push_back(fused.video_cls.values());
  }
  return out;
}

Tensor head_logits(const QfvsFeatures& features, const QfvsHead& head,
                   std::size_t d) {
  std::vector<Tensor> per_segment;
  for (const auto& [begin, end] : features.segments) {
    std::vector<Tensor> rows;
    for (std::size_t i = begin; i < end; ++i)
      rows.push_back(Tensor::from_values({d}, features.clip_reps[i]));
    per_segment.push_back(head.scores(stack_rows(rows)));
  }
  return concat(per_segment, 0);
}

}  // namespace

Tensor qfvs_clip_logits(const QfvsTask& task, const Model& model,
                        const QfvsHead& head, const QfvsOptions& options) {
  const QfvsFeatures features = qfvs_features(task, model, options);
  return head_logits(features, head, model.config().d_model);
}

std::vector<std::size_t> qfvs_summarize(const QfvsTask& task, const Model& model,
                                        const QfvsHead& head,
                                        const QfvsOptions& options) {
  NoGradScope no_grad;
  const Tensor logits = qfvs_clip_logits(task, model, head, options);
  const std::size_t n = task.clips.size();
  std::size_t budget = static_cast<std::size_t>(
      task.budget_fraction * static_cast<double>(n) + 1e-9);
  if (budget == 0) budget = 1;
  budget = std::min(budget, n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return logits.values()[a] > logits.values()[b];
                   });
  std::vector<std::size_t> selected(order.begin(),
                                    order.begin() +
                                        static_cast<std::ptrdiff_t>(budget));
  std::sort(selected.begin(), selected.end());
  return selected;
}

void train_qfvs_head(const Model& model, QfvsHead& head,
                     const std::vector<QfvsTask>& tasks, std::size_t epochs,
                     double lr, const QfvsOptions& options,
                     std::uint64_t seed) {
  (void)seed;  // training order is the fixed task order
  std::vector<QfvsFeatures> cached;
  std::vector<std::vector<double>> labels;
  for (const QfvsTask& task : tasks) {
    cached.push_back(qfvs_features(task, model, options));
    std::vector<double> y;
    for (const auto& annotation : task.annotations)
      y.push_back(annotation.count(task.concepts.first) ||
                          annotation.count(task.concepts.second)
                      ? 1.0
                      : 0.0);
    labels.push_back(std::move(y));
  }

  TrainConfig opt_cfg;
  opt_cfg.weight_decay = 0.0;
  AdamW optimizer(head.params(), opt_cfg);
  const LrRates rates{lr, lr, lr};
  for (std::size_t epoch = 0; epoch < epochs; ++epoch)
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      head.params().zero_grads();
      Tensor logits = head_logits(cached[t], head, model.config().d_model);
      Tensor loss = bce_with_logits(logits, labels[t]);
      loss.backward();
      optimizer.step(rates);
    }
}

// ---------------------------------------------------------------------------
// Task construction and serialization

std::vector<QfvsTask> make_qfvs_tasks(const Corpus& corpus, std::size_t n_tasks,
                                      std::size_t max_text_len, Rng& rng) {
  // Order clips by scenario so segment structure mirrors background changes.
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus[a].clip.scenario_id < corpus[b].clip.scenario_id;
  });

  std::vector<ClipSample> clips;
  std::vector<std::string> clip_ids;
  std::vector<std::set<int>> annotations;
  std::set<int> inventory;
  for (std::size_t idx : order) {
    clips.push_back(corpus[idx].clip);
    clip_ids.push_back(corpus[idx].clip.clip_id);
    annotations.push_back(corpus[idx].narration.nouns);
    for (int nid : corpus[idx].narration.nouns) inventory.insert(nid);
  }
  const std::vector<int> nouns(inventory.begin(), inventory.end());
  if (nouns.size() < 2)
    throw ContractError("make_qfvs_tasks: need at least two distinct nouns");

  std::vector<QfvsTask> tasks;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const int a = nouns[rng.uniform_int(nouns.size())];
    int b = a;
    while (b == a) b = nouns[rng.uniform_int(nouns.size())];

    QfvsTask task;
    task.clips = clips;
    task.clip_ids = clip_ids;
    task.annotations = annotations;
    task.concepts = {a, b};
    task.template_id = static_cast<int>(rng.uniform_int(10));
    std::size_t relevant = 0;
    for (const auto& ann : task.annotations)
      if (ann.count(a) || ann.count(b)) ++relevant;
    task.budget_fraction = relevant > 0
                               ? static_cast<double>(relevant) /
                                     static_cast<double>(clips.size())
                               : 0.02;
    task.query = tokenize(render_prompt(task.concepts, task.template_id),
                          Lexicon::builtin(), max_text_len);
    tasks.push_back(std::move(task));
  }
  return tasks;
}

void save_qfvs_jsonl(const std::string& path,
                     const std::vector<QfvsTask>& tasks) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  for (const QfvsTask& task : tasks) {
    json rec = {
        {"clip_ids", task.clip_ids},
        {"concepts", {task.concepts.first, task.concepts.second}},
        {"template_id", task.template_id},
        {"budget_fraction", task.budget_fraction},
    };
    os << rec.dump() << "\n";
  }
}

std::vector<QfvsTask> load_qfvs_jsonl(const std::string& path,
                                      const Corpus& corpus,
                                      std::size_t max_text_len) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    by_id[corpus[i].clip.clip_id] = i;

  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<QfvsTask> tasks;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      QfvsTask task;
      task.clip_ids = rec.at("clip_ids").get<std::vector<std::string>>();
      const auto concepts = rec.at("concepts").get<std::vector<int>>();
      task.concepts = {concepts.at(0), concepts.at(1)};
      task.template_id = rec.at("template_id").get<int>();
      task.budget_fraction = rec.at("budget_fraction").get<double>();
      for (const std::string& id : task.clip_ids) {
        const CorpusPair& pair = corpus.at(by_id.at(id));
        task.clips.push_back(pair.clip);
        task.annotations.push_back(pair.narration.nouns);
      }
      task.query = tokenize(render_prompt(task.concepts, task.template_id),
                            Lexicon::builtin(), max_text_len);
      tasks.push_back(std::move(task));
    } catch (const std::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return tasks;
}

}  // namespace vtp
