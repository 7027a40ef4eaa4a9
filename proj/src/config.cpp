#include "vtp/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace vtp {

using nlohmann::json;

namespace {

template <typename T>
void read_field(const json& j, const char* section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key + ": " + e.what());
  }
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("model." + field + ": " + why);
  };
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    fail("d_model", "must be positive and divisible by n_heads");
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0)
    fail("image_size", "must be divisible by patch_size");
  if (n_layers == 0) fail("n_layers", "must be positive");
  if (n_fused > n_layers) fail("n_fused", "must satisfy M <= N");
  if (frames == 0) fail("frames", "must be positive");
  if (projector_dims.empty()) fail("projector_dims", "must be non-empty");
  if (vocab_size == 0) fail("vocab_size", "must be positive");
  if (max_text_len < 1) fail("max_text_len", "must allow at least the CLS slot");
  if (ffn_mult == 0) fail("ffn_mult", "must be positive");
  if (channels == 0) fail("channels", "must be positive");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (epochs == 0) fail("epochs", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (peak_lr_backbone <= 0 || peak_lr_crossattn <= 0 || peak_lr_heads <= 0)
    fail("peak_lr_*", "all rates must be > 0");
  if (warmup_epochs >= epochs) fail("warmup_epochs", "must be < epochs");
  if (end_lr <= 0) fail("end_lr", "must be > 0");
  if (betas[0] < 0 || betas[0] >= 1 || betas[1] < 0 || betas[1] >= 1)
    fail("betas", "must lie in [0,1)");
  if (eps <= 0) fail("eps", "must be > 0");
  if (weight_decay < 0) fail("weight_decay", "must be >= 0");
}

void LossWeights::validate() const {
  if (tau <= 0) throw ConfigError("loss.tau: must be > 0");
  if (gamma < 0) throw ConfigError("loss.gamma: must be >= 0");
  if (delta < 0) throw ConfigError("loss.delta: must be >= 0");
  if (gamma + delta >= 1.0)
    throw ConfigError("loss.gamma+delta: must be < 1");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  loss.validate();
}

std::string positive_rule_name(PositiveRule rule) {
  return rule == PositiveRule::And ? "and" : "or";
}

PositiveRule positive_rule_from(const std::string& name) {
  if (name == "and") return PositiveRule::And;
  if (name == "or") return PositiveRule::Or;
  throw ConfigError("loss.positive_rule: expected \"and\" or \"or\", got \"" +
                    name + "\"");
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  RunConfig cfg;
  if (j.contains("model")) {
    const json& m = j.at("model");
    read_field(m, "model", "n_layers", cfg.model.n_layers);
    read_field(m, "model", "n_fused", cfg.model.n_fused);
    read_field(m, "model", "d_model", cfg.model.d_model);
    read_field(m, "model", "n_heads", cfg.model.n_heads);
    read_field(m, "model", "frames", cfg.model.frames);
    read_field(m, "model", "patch_size", cfg.model.patch_size);
    read_field(m, "model", "image_size", cfg.model.image_size);
    read_field(m, "model", "channels", cfg.model.channels);
    read_field(m, "model", "vocab_size", cfg.model.vocab_size);
    read_field(m, "model", "max_text_len", cfg.model.max_text_len);
    read_field(m, "model", "projector_dims", cfg.model.projector_dims);
    read_field(m, "model", "ffn_mult", cfg.model.ffn_mult);
    read_field(m, "model", "residual_from_xhat", cfg.model.residual_from_xhat);
    read_field(m, "model", "post_norm", cfg.model.post_norm);
    read_field(m, "model", "learnable_alpha", cfg.model.learnable_alpha);
    if (m.contains("precision")) {
      const std::string p = m.at("precision").get<std::string>();
      if (p == "f64")
        cfg.model.precision = Precision::F64;
      else if (p == "f32")
        cfg.model.precision = Precision::F32;
      else
        throw ConfigError("model.precision: expected \"f64\" or \"f32\"");
    }
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    read_field(t, "train", "epochs", cfg.train.epochs);
    read_field(t, "train", "batch_size", cfg.train.batch_size);
    read_field(t, "train", "peak_lr_backbone", cfg.train.peak_lr_backbone);
    read_field(t, "train", "peak_lr_crossattn", cfg.train.peak_lr_crossattn);
    read_field(t, "train", "peak_lr_heads", cfg.train.peak_lr_heads);
    read_field(t, "train", "warmup_epochs", cfg.train.warmup_epochs);
    read_field(t, "train", "end_lr", cfg.train.end_lr);
    read_field(t, "train", "betas", cfg.train.betas);
    read_field(t, "train", "eps", cfg.train.eps);
    read_field(t, "train", "weight_decay", cfg.train.weight_decay);
    read_field(t, "train", "seed", cfg.train.seed);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    read_field(l, "loss", "tau", cfg.loss.tau);
    read_field(l, "loss", "gamma", cfg.loss.gamma);
    read_field(l, "loss", "delta", cfg.loss.delta);
    if (l.contains("positive_rule"))
      cfg.loss.positive_rule =
          positive_rule_from(l.at("positive_rule").get<std::string>());
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    read_field(p, "paths", "corpus", cfg.paths.corpus);
    read_field(p, "paths", "checkpoint", cfg.paths.checkpoint);
    read_field(p, "paths", "output", cfg.paths.output);
  }
  read_field(j, "", "seed", cfg.seed);

  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["model"] = {
      {"n_layers", cfg.model.n_layers},
      {"n_fused", cfg.model.n_fused},
      {"d_model", cfg.model.d_model},
      {"n_heads", cfg.model.n_heads},
      {"frames", cfg.model.frames},
      {"patch_size", cfg.model.patch_size},
      {"image_size", cfg.model.image_size},
      {"channels", cfg.model.channels},
      {"vocab_size", cfg.model.vocab_size},
      {"max_text_len", cfg.model.max_text_len},
      {"projector_dims", cfg.model.projector_dims},
      {"ffn_mult", cfg.model.ffn_mult},
      {"residual_from_xhat", cfg.model.residual_from_xhat},
      {"post_norm", cfg.model.post_norm},
      {"learnable_alpha", cfg.model.learnable_alpha},
      {"precision", cfg.model.precision == Precision::F64 ? "f64" : "f32"},
  };
  j["train"] = {
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"peak_lr_backbone", cfg.train.peak_lr_backbone},
      {"peak_lr_crossattn", cfg.train.peak_lr_crossattn},
      {"peak_lr_heads", cfg.train.peak_lr_heads},
      {"warmup_epochs", cfg.train.warmup_epochs},
      {"end_lr", cfg.train.end_lr},
      {"betas", cfg.train.betas},
      {"eps", cfg.train.eps},
      {"weight_decay", cfg.train.weight_decay},
      {"seed", cfg.train.seed},
  };
  j["loss"] = {
      {"tau", cfg.loss.tau},
      {"gamma", cfg.loss.gamma},
      {"delta", cfg.loss.delta},
      {"positive_rule", positive_rule_name(cfg.loss.positive_rule)},
  };
  j["paths"] = {
      {"corpus", cfg.paths.corpus},
      {"checkpoint", cfg.paths.checkpoint},
      {"output", cfg.paths.output},
  };
  j["seed"] = cfg.seed;
  return j.dump(2);
}

std::uint64_t config_hash(const RunConfig& cfg) {
  // Hash only fields that determine the computation, not output paths.
  RunConfig canon = cfg;
  canon.paths = Paths{};
  const std::string text = run_config_json(canon);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace vtp
