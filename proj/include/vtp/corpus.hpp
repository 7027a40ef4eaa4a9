#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "vtp/config.hpp"
#include "vtp/rng.hpp"
#include "vtp/tensor.hpp"

namespace vtp {

// Closed synthetic vocabulary. Tokens are whitespace words; noun/verb tags
// come from fixed id sets, so positive-pair semantics are exactly checkable.
struct Lexicon {
  std::vector<std::string> tokens;  // id -> surface form
  std::map<std::string, int> vocab;
  std::set<int> noun_ids;
  std::set<int> verb_ids;
  std::vector<int> noun_list;  // noun ids in id order
  std::vector<int> verb_list;
  int pad_id = 0, mask_id = 1, cls_id = 2, unk_id = 3;

  static const Lexicon& builtin();

  std::size_t size() const { return tokens.size(); }
  const std::string& word(int id) const;
  // Surface lookup with lowercasing and trailing-'s' de-pluralization.
  int lookup(const std::string& word) const;
  bool is_special(int id) const {
    return id == pad_id || id == mask_id || id == cls_id || id == unk_id;
  }
};

struct NarrationSample {
  std::vector<int> tokens;           // CLS-prefixed, padded to max_text_len
  std::set<int> nouns;               // lexicon ids
  std::set<int> verbs;
  std::vector<std::uint8_t> pad_mask;  // 1 = real token

  std::size_t real_len() const;
  bool operator==(const NarrationSample&) const = default;
};

struct ClipSample {
  std::string clip_id;
  Tensor frames;  // [T, H, W, C], values in [0,1], f32-representable
  int scenario_id = 0;
  double duration_s = 1.0;
};

struct CorpusPair {
  ClipSample clip;
  NarrationSample narration;
};

using Corpus = std::vector<CorpusPair>;

struct CorpusOptions {
  std::size_t n_pairs = 200;
  std::size_t n_scenarios = 10;
  std::uint64_t seed = 7;
  // Separability knob in [0,1]; rendering noise amplitude is 0.3*(1-signal).
  double signal = 0.9;
};

// Deterministic renderer: object color encodes the noun, motion across
// frames encodes the verb, background color encodes the scenario.
Tensor render_frames(std::size_t noun_index, std::size_t verb_index,
                     std::size_t scenario_index, const ModelConfig& config,
                     double noise_amp, Rng& rng);

// Seed-deterministic synthetic corpus. Noun/verb/scenario assignments avoid
// duplicate (noun, verb) combinations while capacity allows, every scenario
// receives at least two clips, and frames are statistically tied to the text.
Corpus generate_corpus(const CorpusOptions& options, const ModelConfig& config);

NarrationSample tokenize(const std::string& text, const Lexicon& lexicon,
                         std::size_t max_text_len);

// Noun/verb sets implied by a token sequence.
std::pair<std::set<int>, std::set<int>> tag_tokens(const std::vector<int>& tokens,
                                                   const Lexicon& lexicon);

// JSONL records {clip_id, scenario_id, duration_s, text_tokens, nouns,
// verbs, blob_offset}; frames live in `path + ".bin"` as little-endian
// 32-bit floats, concatenated in record order.
void save_jsonl(const std::string& path, const Corpus& corpus);
Corpus load_jsonl(const std::string& path, const ModelConfig& config);

}  // namespace vtp
