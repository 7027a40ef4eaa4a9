// Command-line entry point: corpus generation, pre-training, retrieval and
// MCQ evaluation, query-focused summarization, the cost model and the
// gradient-check suite.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vtp/config.hpp"
#include "vtp/corpus.hpp"
#include "vtp/costmodel.hpp"
#include "vtp/downstream.hpp"
#include "vtp/errors.hpp"
#include "vtp/gradcheck.hpp"
#include "vtp/model.hpp"
#include "vtp/objectives.hpp"
#include "vtp/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw vtp::IoError("cannot write " + path);
  os << text;
}

std::vector<std::size_t> train_split(std::size_t corpus_size,
                                     std::size_t holdout) {
  if (holdout >= corpus_size)
    throw vtp::ConfigError("holdout: must leave at least one training pair");
  std::vector<std::size_t> idx(corpus_size - holdout);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return idx;
}

std::vector<std::size_t> holdout_split(std::size_t corpus_size,
                                       std::size_t holdout) {
  if (holdout > corpus_size)
    throw vtp::ConfigError("holdout: larger than the corpus");
  std::vector<std::size_t> idx(holdout);
  for (std::size_t i = 0; i < holdout; ++i) idx[i] = corpus_size - holdout + i;
  return idx;
}

void require_params(const std::string& checkpoint,
                    const std::vector<std::string>& needed) {
  const std::vector<std::string> names =
      vtp::checkpoint_param_names(checkpoint);
  for (const std::string& want : needed)
    if (std::find(names.begin(), names.end(), want) == names.end())
      throw vtp::ConfigError("checkpoint " + checkpoint +
                             " lacks required parameter '" + want + "'");
}

struct Options {
  std::string config_path, out_path, corpus_path, checkpoint_path, items_path,
      resume_path, tasks_path;
  std::string mode = "dual";
  std::string variant = "all";
  std::size_t pairs = 200, scenarios = 10, holdout = 50, per_kind = 25;
  std::size_t qfvs_train = 6, qfvs_eval = 4, qfvs_epochs = 20;
  std::size_t save_epoch = 0;
  double signal = 0.9, qfvs_lr = 3e-3;
  std::uint64_t seed_override = 0;
  bool seed_given = false;
};

std::string resolved_corpus_path(const Options& opt, const vtp::RunConfig& cfg) {
  const std::string path =
      !opt.corpus_path.empty() ? opt.corpus_path : cfg.paths.corpus;
  if (path.empty())
    throw vtp::ConfigError("paths.corpus: no corpus path given");
  return path;
}

int run_gen_corpus(const Options& opt, const vtp::RunConfig& cfg) {
  vtp::CorpusOptions options;
  options.n_pairs = opt.pairs;
  options.n_scenarios = opt.scenarios;
  options.seed = cfg.seed;
  options.signal = opt.signal;
  const std::string path =
      !opt.out_path.empty()
          ? opt.out_path
          : (!cfg.paths.corpus.empty() ? cfg.paths.corpus : "corpus.jsonl");
  const vtp::Corpus corpus = vtp::generate_corpus(options, cfg.model);
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty())
    fs::create_directories(parent);
  vtp::save_jsonl(path, corpus);
  std::cout << "wrote " << corpus.size() << " pairs to " << path << "\n";
  return 0;
}

int run_pretrain(const Options& opt, const vtp::RunConfig& cfg) {
  const vtp::Corpus corpus =
      vtp::load_jsonl(resolved_corpus_path(opt, cfg), cfg.model);
  const std::string out_dir =
      !opt.out_path.empty()
          ? opt.out_path
          : (!cfg.paths.output.empty() ? cfg.paths.output : ".");
  fs::create_directories(out_dir);

  vtp::Model model(cfg.model, cfg.seed);
  vtp::Trainer trainer(model, cfg, corpus,
                       train_split(corpus.size(), opt.holdout));
  if (!opt.resume_path.empty()) trainer.load_checkpoint(opt.resume_path);
  trainer.run(opt.save_epoch ? std::optional<std::size_t>(opt.save_epoch)
                             : std::nullopt);

  const std::string ckpt = !cfg.paths.checkpoint.empty()
                               ? cfg.paths.checkpoint
                               : out_dir + "/checkpoint.bin";
  if (const fs::path parent = fs::path(ckpt).parent_path(); !parent.empty())
    fs::create_directories(parent);
  trainer.save_checkpoint(ckpt);
  vtp::write_history_csv(out_dir + "/loss_history.csv", trainer.history());
  std::cout << "trained " << trainer.step() << " steps; checkpoint " << ckpt
            << "\n";
  return 0;
}

int run_eval(const Options& opt, const vtp::RunConfig& cfg, bool mcq_mode) {
  if (opt.mode != "dual" && opt.mode != "fused" && opt.mode != "ensemble")
    throw vtp::ConfigError("--mode: expected dual, fused or ensemble");
  if (opt.mode != "dual")
    require_params(opt.checkpoint_path, {"heads.vtm.weight", "heads.vtm.bias"});

  const vtp::Corpus corpus =
      vtp::load_jsonl(resolved_corpus_path(opt, cfg), cfg.model);
  const std::vector<std::size_t> pool =
      holdout_split(corpus.size(), opt.holdout);
  vtp::Model model(cfg.model, cfg.seed);
  vtp::load_model_params(model, cfg, opt.checkpoint_path);

  json metrics;
  if (mcq_mode) {
    std::vector<vtp::McqItem> items;
    if (!opt.items_path.empty() && fs::exists(opt.items_path)) {
      items = vtp::load_mcq_jsonl(opt.items_path, corpus);
    } else {
      vtp::Rng rng(cfg.seed ^ 0x6d637144ULL);
      items = vtp::make_mcq_items(corpus, pool, opt.per_kind, rng);
      if (!opt.items_path.empty()) vtp::save_mcq_jsonl(opt.items_path, items);
    }
    const vtp::McqScorer scorer =
        opt.mode == "dual" ? vtp::make_dual_scorer(model)
        : opt.mode == "fused" ? vtp::make_fused_scorer(model)
                              : vtp::make_ensemble_scorer(model);
    const vtp::McqAccuracy acc = vtp::eval_mcq(items, scorer);
    metrics = {{"mode", opt.mode},
               {"inter_accuracy", acc.inter},
               {"intra_accuracy", acc.intra},
               {"inter_items", acc.inter_count},
               {"intra_items", acc.intra_count}};
  } else {
    std::vector<vtp::NarrationSample> queries;
    std::vector<vtp::ClipSample> gallery;
    for (std::size_t idx : pool) {
      queries.push_back(corpus[idx].narration);
      gallery.push_back(corpus[idx].clip);
    }
    std::vector<double> scores;
    if (opt.mode == "dual")
      scores = vtp::retrieve_dual(model, queries, gallery);
    else if (opt.mode == "fused")
      scores = vtp::retrieve_fused(model, queries, gallery);
    else
      scores = vtp::retrieve_ensemble(
          vtp::retrieve_dual(model, queries, gallery),
          vtp::retrieve_fused(model, queries, gallery));
    const vtp::RetrievalMetrics m =
        vtp::retrieval_metrics(scores, queries.size(), gallery.size());
    metrics = {{"mode", opt.mode},
               {"t2v_r1", m.r1},
               {"t2v_r5", m.r5},
               {"t2v_r10", m.r10},
               {"t2v_median_rank", m.median_rank}};
  }
  const std::string text = metrics.dump(2) + "\n";
  if (!opt.out_path.empty()) write_text(opt.out_path, text);
  std::cout << text;
  return 0;
}

int run_qfvs(const Options& opt, const vtp::RunConfig& cfg) {
  const vtp::Corpus corpus =
      vtp::load_jsonl(resolved_corpus_path(opt, cfg), cfg.model);
  vtp::Model model(cfg.model, cfg.seed);
  vtp::load_model_params(model, cfg, opt.checkpoint_path);

  std::vector<vtp::QfvsTask> tasks;
  if (!opt.tasks_path.empty() && fs::exists(opt.tasks_path)) {
    tasks = vtp::load_qfvs_jsonl(opt.tasks_path, corpus, cfg.model.max_text_len);
  } else {
    vtp::Rng rng(cfg.seed ^ 0x71667673ULL);
    tasks = vtp::make_qfvs_tasks(corpus, opt.qfvs_train + opt.qfvs_eval,
                                 cfg.model.max_text_len, rng);
    if (!opt.tasks_path.empty()) vtp::save_qfvs_jsonl(opt.tasks_path, tasks);
  }
  if (tasks.size() <= opt.qfvs_train)
    throw vtp::ConfigError("qfvs: not enough tasks for the requested split");

  const std::vector<vtp::QfvsTask> train_tasks(
      tasks.begin(), tasks.begin() + static_cast<std::ptrdiff_t>(opt.qfvs_train));
  const std::vector<vtp::QfvsTask> eval_tasks(
      tasks.begin() + static_cast<std::ptrdiff_t>(opt.qfvs_train), tasks.end());
  vtp::QfvsOptions options;
  vtp::QfvsHead head(cfg.model, cfg.seed ^ 0x68656164ULL);
  vtp::train_qfvs_head(model, head, train_tasks, opt.qfvs_epochs, opt.qfvs_lr,
                       options, cfg.seed);

  json results = json::array();
  double f1_sum = 0.0;
  for (const vtp::QfvsTask& task : eval_tasks) {
    const std::vector<std::size_t> selected =
        vtp::qfvs_summarize(task, model, head, options);
    std::vector<std::set<int>> selected_concepts;
    std::vector<std::string> selected_ids;
    for (std::size_t idx : selected) {
      selected_concepts.push_back(task.annotations[idx]);
      selected_ids.push_back(task.clip_ids[idx]);
    }
    std::vector<std::set<int>> reference;
    for (std::size_t i = 0; i < task.clips.size(); ++i)
      if (task.annotations[i].count(task.concepts.first) ||
          task.annotations[i].count(task.concepts.second))
        reference.push_back(task.annotations[i]);
    const vtp::QfvsMetrics m = vtp::qfvs_f1(selected_concepts, reference);
    f1_sum += m.f1;
    results.push_back({{"concepts",
                        {vtp::Lexicon::builtin().word(task.concepts.first),
                         vtp::Lexicon::builtin().word(task.concepts.second)}},
                       {"selected_clip_ids", selected_ids},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1}});
  }
  json out = {{"tasks", results},
              {"mean_f1",
               eval_tasks.empty()
                   ? 0.0
                   : f1_sum / static_cast<double>(eval_tasks.size())}};
  const std::string text = out.dump(2) + "\n";
  if (!opt.out_path.empty()) write_text(opt.out_path, text);
  std::cout << text;
  return 0;
}

int run_cost(const Options& opt, const vtp::RunConfig& cfg) {
  std::vector<vtp::CostVariant> variants;
  if (opt.variant == "all")
    variants = {vtp::CostVariant::Dual, vtp::CostVariant::InBackbone,
                vtp::CostVariant::Stacked};
  else if (opt.variant == "dual")
    variants = {vtp::CostVariant::Dual};
  else if (opt.variant == "in_backbone")
    variants = {vtp::CostVariant::InBackbone};
  else if (opt.variant == "stacked")
    variants = {vtp::CostVariant::Stacked};
  else
    throw vtp::ConfigError(
        "--variant: expected dual, in_backbone, stacked or all");

  std::cout << vtp::cost_table(cfg.model, variants);
  if (!opt.out_path.empty()) {
    json rows = json::array();
    for (vtp::CostVariant v : variants) {
      const vtp::CostReport r = vtp::cost_report(cfg.model, v);
      rows.push_back({{"variant", vtp::cost_variant_name(v)},
                      {"fusion_layers", r.n_fusion_layers},
                      {"params", r.params},
                      {"macs_per_instance", r.macs_per_instance}});
    }
    write_text(opt.out_path, rows.dump(2) + "\n");
  }
  return 0;
}

int run_gradcheck(const vtp::RunConfig& cfg) {
  const std::vector<vtp::SuiteEntry> entries =
      vtp::run_gradcheck_suite(cfg.seed);
  bool all_ok = true;
  for (const vtp::SuiteEntry& e : entries) {
    std::cout << (e.ok ? "[PASS] " : "[FAIL] ") << e.name
              << "  max_rel_err=" << e.report.max_rel_err << " (tol "
              << e.tolerance << ")";
    if (!e.ok) std::cout << "  worst=" << e.report.worst;
    std::cout << "\n";
    all_ok = all_ok && e.ok;
  }
  if (!all_ok) throw vtp::TrainingError("gradient suite failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Two-tower video-text pre-training with gated cross-attention fusion"};
  Options opt;

  auto add_config = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "run configuration JSON")
        ->required();
    sub->add_option("--seed", opt.seed_override, "override the config seed")
        ->each([&opt](const std::string&) { opt.seed_given = true; });
  };

  CLI::App* gen =
      app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  add_config(gen);
  gen->add_option("--out", opt.out_path, "corpus JSONL path");
  gen->add_option("--pairs", opt.pairs, "number of clip-text pairs");
  gen->add_option("--scenarios", opt.scenarios, "number of scenarios");
  gen->add_option("--signal", opt.signal, "separability knob in [0,1]");

  CLI::App* pre = app.add_subcommand("pretrain", "run pre-training");
  add_config(pre);
  pre->add_option("--corpus", opt.corpus_path, "corpus JSONL path");
  pre->add_option("--out", opt.out_path, "output directory");
  pre->add_option("--holdout", opt.holdout, "held-out tail size");
  pre->add_option("--resume", opt.resume_path, "checkpoint to resume from");
  pre->add_option("--save-epoch", opt.save_epoch,
                  "stop and save after this many epochs");

  CLI::App* mcq = app.add_subcommand("eval-mcq", "multiple-choice evaluation");
  add_config(mcq);
  mcq->add_option("--checkpoint", opt.checkpoint_path, "model checkpoint")
      ->required();
  mcq->add_option("--corpus", opt.corpus_path, "corpus JSONL path");
  mcq->add_option("--mode", opt.mode, "dual | fused | ensemble")
      ->default_val("ensemble");
  mcq->add_option("--items", opt.items_path,
                  "MCQ items JSONL (generated if absent)");
  mcq->add_option("--holdout", opt.holdout, "held-out tail size");
  mcq->add_option("--per-kind", opt.per_kind, "items per kind when generating");
  mcq->add_option("--out", opt.out_path, "metrics JSON path");

  CLI::App* ret = app.add_subcommand("eval-retrieval", "retrieval evaluation");
  add_config(ret);
  ret->add_option("--checkpoint", opt.checkpoint_path, "model checkpoint")
      ->required();
  ret->add_option("--corpus", opt.corpus_path, "corpus JSONL path");
  ret->add_option("--mode", opt.mode, "dual | fused | ensemble")
      ->default_val("dual");
  ret->add_option("--holdout", opt.holdout, "held-out tail size");
  ret->add_option("--out", opt.out_path, "metrics JSON path");

  CLI::App* qfvs = app.add_subcommand("qfvs", "query-focused summarization");
  add_config(qfvs);
  qfvs->add_option("--checkpoint", opt.checkpoint_path, "model checkpoint")
      ->required();
  qfvs->add_option("--corpus", opt.corpus_path, "corpus JSONL path");
  qfvs->add_option("--tasks", opt.tasks_path,
                   "tasks JSONL (generated if absent)");
  qfvs->add_option("--train-tasks", opt.qfvs_train, "head-tuning task count");
  qfvs->add_option("--eval-tasks", opt.qfvs_eval, "evaluation task count");
  qfvs->add_option("--epochs", opt.qfvs_epochs, "head-tuning epochs");
  qfvs->add_option("--lr", opt.qfvs_lr, "head-tuning learning rate");
  qfvs->add_option("--out", opt.out_path, "result JSON path");

  CLI::App* cost = app.add_subcommand("cost", "parameter and MAC accounting");
  add_config(cost);
  cost->add_option("--variant", opt.variant, "dual | in_backbone | stacked | all")
      ->default_val("all");
  cost->add_option("--out", opt.out_path, "report JSON path");

  CLI::App* grad =
      app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_config(grad);

  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    vtp::RunConfig cfg = vtp::load_run_config(opt.config_path);
    if (opt.seed_given) cfg.seed = opt.seed_override;

    if (gen->parsed()) return run_gen_corpus(opt, cfg);
    if (pre->parsed()) return run_pretrain(opt, cfg);
    if (mcq->parsed()) return run_eval(opt, cfg, /*mcq_mode=*/true);
    if (ret->parsed()) return run_eval(opt, cfg, /*mcq_mode=*/false);
    if (qfvs->parsed()) return run_qfvs(opt, cfg);
    if (cost->parsed()) return run_cost(opt, cfg);
    if (grad->parsed()) return run_gradcheck(cfg);
    return 0;
  } catch (const vtp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
