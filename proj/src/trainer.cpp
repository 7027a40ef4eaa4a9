#include "vtp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vtp/serialize.hpp"

#include <json.hpp>

namespace vtp {

LrRates lr_schedule(std::size_t step, std::size_t total_steps,
                    std::size_t warmup_steps, const TrainConfig& config) {
  if (step > total_steps)
    throw ContractError("lr_schedule: step past total_steps");
  auto shape = [&](double peak) {
    if (warmup_steps > 0 && step <= warmup_steps)
      return peak * static_cast<double>(step) /
             static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return peak;
    const double frac = static_cast<double>(step - warmup_steps) /
                        static_cast<double>(total_steps - warmup_steps);
    return peak + (config.end_lr - peak) * frac;
  };
  return LrRates{shape(config.peak_lr_backbone), shape(config.peak_lr_crossattn),
                 shape(config.peak_lr_heads)};
}

AdamW::AdamW(ParamRegistry& params, const TrainConfig& config)
    : params_(&params), config_(config) {
  for (const Parameter& p : params.all()) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void AdamW::step(const LrRates& rates) {
  ++t_;
  const double b1 = config_.betas[0], b2 = config_.betas[1];
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto& params = params_->all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    if (!p.tensor.requires_grad()) continue;
    const double lr = rates.for_group(p.group);
    const auto& g = p.tensor.grad();
    auto& w = p.tensor.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g[j];
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
      w[j] -= lr * config_.weight_decay * w[j];
    }
  }
}

void AdamW::restore(std::size_t t, std::vector<std::vector<double>> m,
                    std::vector<std::vector<double>> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw ContractError("AdamW::restore: moment count mismatch");
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

namespace {

std::uint64_t derive_train_seed(const RunConfig& config) {
  std::uint64_t x = config.seed ^ (config.train.seed * 0x9e3779b97f4a7c15ULL) ^
                    0x747261696eULL;
  return Rng::splitmix64(x);
}

}  // namespace

Trainer::Trainer(Model& model, const RunConfig& config, const Corpus& corpus,
                 std::vector<std::size_t> train_indices)
    : model_(model),
      config_(config),
      corpus_(corpus),
      train_indices_(std::move(train_indices)),
      optimizer_(model.params(), config.train),
      rng_(derive_train_seed(config)) {
  if (train_indices_.size() < config_.train.batch_size)
    throw ConfigError("trainer: fewer training pairs than one batch");
}

std::size_t Trainer::steps_per_epoch() const {
  return train_indices_.size() / config_.train.batch_size;
}

std::size_t Trainer::total_steps() const {
  return steps_per_epoch() * config_.train.epochs;
}

BatchPlan Trainer::plan_batch(const std::vector<std::size_t>& batch_indices) {
  return make_batch_plan(batch_indices, corpus_, config_.loss.positive_rule,
                         rng_, /*with_scene_negatives=*/true);
}

StepRecord Trainer::train_step(const std::vector<std::size_t>& batch_indices,
                               const BatchPlan& plan) {
  const std::size_t n = batch_indices.size();
  const Lexicon& lex = Lexicon::builtin();
  model_.zero_grads();

  // Pass 1: dual encoders over the augmented batch.
  std::vector<Tensor> video_rows, text_rows;
  auto embed_pair = [&](std::size_t corpus_idx) {
    const CorpusPair& pair = corpus_.at(corpus_idx);
    video_rows.push_back(model_.embed_video(pair.clip.frames));
    text_rows.push_back(model_.embed_text(pair.narration));
  };
  for (std::size_t idx : plan.base_indices) embed_pair(idx);
  for (std::size_t idx : plan.scene_negative_indices) embed_pair(idx);
  Tensor video_stack = stack_rows(video_rows);
  Tensor text_stack = stack_rows(text_rows);
  Tensor l_nce = contrastive_loss(video_stack, text_stack, plan,
                                  config_.loss.tau);

  // Base-pair similarity values reused for hard-negative sampling; the
  // sampling is a non-differentiable selection.
  const std::size_t p_dim = video_stack.shape()[1];
  std::vector<double> base_sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < p_dim; ++c)
        dot += video_stack.values()[i * p_dim + c] *
               text_stack.values()[j * p_dim + c];
      base_sim[i * n + j] = dot;
    }

  // Pass 2: fused encoders on masked text.
  std::vector<Tensor> logit_blocks;
  std::vector<int> mlm_targets;
  for (std::size_t b = 0; b < n; ++b) {
    const CorpusPair& pair = corpus_.at(plan.base_indices[b]);
    const MaskedText masked =
        mask_tokens(pair.narration, lex, config_.model.vocab_size, rng_);
    if (masked.positions.empty()) continue;
    TowerOutputs fused = model_.fused_forward(pair.clip.frames, masked.tokens,
                                              pair.narration.pad_mask);
    logit_blocks.push_back(
        model_.vocab_logits(fused.text_tokens, masked.positions));
    mlm_targets.insert(mlm_targets.end(), masked.targets.begin(),
                       masked.targets.end());
  }
  Tensor l_mlm = logit_blocks.empty()
                     ? Tensor::from_values({1}, {0.0})
                     : cross_entropy(concat(logit_blocks, 0), mlm_targets);

  // Pass 3: fused encoders on matched and hard-negative pairs.
  const HardNegatives negs = sample_hard_negatives(
      base_sim, n, plan.positive_mask, config_.loss.tau, rng_);
  std::vector<std::pair<Tensor, Tensor>> cls_pairs;
  std::vector<double> labels;
  auto fused_pair = [&](std::size_t clip_batch, std::size_t text_batch,
                        double label) {
    const CorpusPair& clip_pair = corpus_.at(plan.base_indices[clip_batch]);
    const CorpusPair& text_pair = corpus_.at(plan.base_indices[text_batch]);
    TowerOutputs fused = model_.fused_forward(clip_pair.clip.frames,
                                              text_pair.narration.tokens,
                                              text_pair.narration.pad_mask);
    cls_pairs.emplace_back(fused.video_cls, fused.text_cls);
    labels.push_back(label);
  };
  for (std::size_t b = 0; b < n; ++b) {
    fused_pair(b, b, 1.0);
    fused_pair(b, negs.text_for_video[b], 0.0);
    fused_pair(negs.video_for_text[b], b, 0.0);
  }
  Tensor l_vtm = vtm_loss(model_, cls_pairs, labels);

  Tensor total = total_loss(l_nce, l_mlm, l_vtm, config_.loss);

  StepRecord rec;
  rec.step = step_;
  rec.l_contrastive = l_nce.scalar();
  rec.l_mlm = l_mlm.scalar();
  rec.l_vtm = l_vtm.scalar();
  rec.total = total.scalar();
  if (!std::isfinite(rec.total) || !std::isfinite(rec.l_contrastive) ||
      !std::isfinite(rec.l_mlm) || !std::isfinite(rec.l_vtm)) {
    std::ostringstream os;
    os << "non-finite loss at step " << step_
       << ": contrastive=" << rec.l_contrastive << " mlm=" << rec.l_mlm
       << " vtm=" << rec.l_vtm << " total=" << rec.total
       << " (gradients not yet computed)";
    throw TrainingError(os.str());
  }

  total.backward();

  double grad_sq = 0.0;
  for (const Parameter& p : model_.params().all())
    if (p.tensor.requires_grad())
      for (double g : p.tensor.grad()) grad_sq += g * g;
  if (!std::isfinite(grad_sq)) {
    std::ostringstream os;
    os << "non-finite gradients at step " << step_
       << ": contrastive=" << rec.l_contrastive << " mlm=" << rec.l_mlm
       << " vtm=" << rec.l_vtm << " total=" << rec.total
       << " grad_norm_sq=" << grad_sq;
    throw TrainingError(os.str());
  }

  rec.rates = lr_schedule(step_ + 1, total_steps(),
                          steps_per_epoch() * config_.train.warmup_epochs,
                          config_.train);
  optimizer_.step(rec.rates);
  ++step_;
  history_.push_back(rec);
  return rec;
}

void Trainer::run(std::optional<std::size_t> stop_after_epoch) {
  const std::size_t n = config_.train.batch_size;
  const std::size_t last =
      std::min<std::size_t>(stop_after_epoch.value_or(config_.train.epochs),
                            config_.train.epochs);
  for (; epoch_ < last; ++epoch_) {
    std::vector<std::size_t> order = train_indices_;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng_.uniform_int(i)]);
    for (std::size_t start = 0; start + n <= order.size(); start += n) {
      std::vector<std::size_t> batch(order.begin() + start,
                                     order.begin() + start + n);
      const BatchPlan plan = plan_batch(batch);
      train_step(batch, plan);
    }
  }
}

namespace {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string Trainer::history_csv() const {
  std::ostringstream os;
  os << "step,l_ego,l_mlm,l_vtm,total,lr_backbone,lr_crossattn,lr_heads\n";
  for (const StepRecord& r : history_)
    os << r.step << "," << format_g17(r.l_contrastive) << ","
       << format_g17(r.l_mlm) << "," << format_g17(r.l_vtm) << ","
       << format_g17(r.total) << "," << format_g17(r.rates.backbone) << ","
       << format_g17(r.rates.crossattn) << "," << format_g17(r.rates.heads)
       << "\n";
  return os.str();
}

void write_history_csv(const std::string& path,
                       const std::vector<StepRecord>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path);
  os << "step,l_ego,l_mlm,l_vtm,total,lr_backbone,lr_crossattn,lr_heads\n";
  for (const StepRecord& r : history)
    os << r.step << "," << format_g17(r.l_contrastive) << ","
       << format_g17(r.l_mlm) << "," << format_g17(r.l_vtm) << ","
       << format_g17(r.total) << "," << format_g17(r.rates.backbone) << ","
       << format_g17(r.rates.crossattn) << "," << format_g17(r.rates.heads)
       << "\n";
}

void Trainer::save_checkpoint(const std::string& path) const {
  Archive archive;
  for (const Parameter& p : model_.params().all())
    archive.put("param/" + p.name, p.tensor.shape(), p.tensor.values());
  const auto& params = model_.params().all();
  for (std::size_t i = 0; i < params.size(); ++i) {
    archive.put("opt.m/" + params[i].name, params[i].tensor.shape(),
                optimizer_.first_moments()[i]);
    archive.put("opt.v/" + params[i].name, params[i].tensor.shape(),
                optimizer_.second_moments()[i]);
  }
  const auto state = rng_.state();
  archive.put_u64("rng.state", {state.begin(), state.end()});

  std::vector<double> rows;
  rows.reserve(history_.size() * 8);
  for (const StepRecord& r : history_) {
    rows.push_back(static_cast<double>(r.step));
    rows.push_back(r.l_contrastive);
    rows.push_back(r.l_mlm);
    rows.push_back(r.l_vtm);
    rows.push_back(r.total);
    rows.push_back(r.rates.backbone);
    rows.push_back(r.rates.crossattn);
    rows.push_back(r.rates.heads);
  }
  archive.put("history.rows", {history_.size(), 8}, std::move(rows));

  nlohmann::json meta = {
      {"config_hash", config_hash(config_)},
      {"step", step_},
      {"epoch", epoch_},
      {"opt_t", optimizer_.steps_taken()},
      {"seed", config_.seed},
  };
  archive.save(path, meta.dump());
}

void Trainer::load_checkpoint(const std::string& path) {
  auto [archive, meta_text] = Archive::load(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint metadata: " + std::string(e.what()));
  }
  const std::uint64_t stored = meta.at("config_hash").get<std::uint64_t>();
  const std::uint64_t expected = config_hash(config_);
  if (stored != expected) {
    std::ostringstream os;
    os << "checkpoint config hash mismatch: stored " << std::hex << stored
       << ", current config " << expected;
    throw ConfigError(os.str());
  }

  auto& params = model_.params().all();
  std::vector<std::vector<double>> m, v;
  for (Parameter& p : params) {
    const Archive::Entry& e = archive.get("param/" + p.name);
    if (e.shape != p.tensor.shape())
      throw ParseError("checkpoint: shape mismatch for " + p.name);
    p.tensor.mutable_values() = e.data;
    m.push_back(archive.get("opt.m/" + p.name).data);
    v.push_back(archive.get("opt.v/" + p.name).data);
  }
  optimizer_.restore(meta.at("opt_t").get<std::size_t>(), std::move(m),
                     std::move(v));

  const auto words = archive.get_u64("rng.state");
  if (words.size() != 4) throw ParseError("checkpoint: bad rng state");
  rng_.set_state({words[0], words[1], words[2], words[3]});

  step_ = meta.at("step").get<std::size_t>();
  epoch_ = meta.at("epoch").get<std::size_t>();

  history_.clear();
  const Archive::Entry& rows = archive.get("history.rows");
  for (std::size_t r = 0; r < rows.shape[0]; ++r) {
    StepRecord rec;
    rec.step = static_cast<std::size_t>(rows.data[r * 8 + 0]);
    rec.l_contrastive = rows.data[r * 8 + 1];
    rec.l_mlm = rows.data[r * 8 + 2];
    rec.l_vtm = rows.data[r * 8 + 3];
    rec.total = rows.data[r * 8 + 4];
    rec.rates.backbone = rows.data[r * 8 + 5];
    rec.rates.crossattn = rows.data[r * 8 + 6];
    rec.rates.heads = rows.data[r * 8 + 7];
    history_.push_back(rec);
  }
}

std::vector<std::string> checkpoint_param_names(const std::string& path) {
  auto [archive, meta] = Archive::load(path);
  std::vector<std::string> names;
  for (const std::string& name : archive.names())
    if (name.rfind("param/", 0) == 0) names.push_back(name.substr(6));
  return names;
}

void load_model_params(Model& model, const RunConfig& config,
                       const std::string& path) {
  auto [archive, meta_text] = Archive::load(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint metadata: " + std::string(e.what()));
  }
  const std::uint64_t stored = meta.at("config_hash").get<std::uint64_t>();
  const std::uint64_t expected = config_hash(config);
  if (stored != expected) {
    std::ostringstream os;
    os << "checkpoint config hash mismatch: stored " << std::hex << stored
       << ", current config " << expected;
    throw ConfigError(os.str());
  }
  for (Parameter& p : model.params().all()) {
    const Archive::Entry& e = archive.get("param/" + p.name);
    if (e.shape != p.tensor.shape())
      throw ParseError("checkpoint: shape mismatch for " + p.name);
    p.tensor.mutable_values() = e.data;
  }
}

}  // namespace vtp
