#include "vtp/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace vtp {

using nlohmann::json;

namespace {

const char* kNouns[] = {"drawer", "fridge", "hat",    "phone",  "cup",
                        "plate",  "knife",  "spoon",  "book",   "box",
                        "door",   "window", "bottle", "bag",    "towel",
                        "brush",  "pan",    "lamp"};
const char* kVerbs[] = {"open", "close", "take", "put",  "wash", "cut",  "move",
                        "lift", "drop",  "push", "pull", "turn", "shake", "hold"};
const char* kScenarios[] = {"kitchen", "garage", "garden", "office", "lab",
                            "studio",  "porch",  "shop",   "gym",    "hall"};
const char* kFillers[] = {"the", "a",     "in",         "person", "all",
                          "scene", "containing", "and",    "with",  "on"};

Lexicon build_lexicon() {
  Lexicon lex;
  auto push = [&lex](const std::string& w) {
    const int id = static_cast<int>(lex.tokens.size());
    lex.tokens.push_back(w);
    lex.vocab.emplace(w, id);
    return id;
  };
  lex.pad_id = push("<pad>");
  lex.mask_id = push("<mask>");
  lex.cls_id = push("<cls>");
  lex.unk_id = push("<unk>");
  for (const char* w : kNouns) {
    const int id = push(w);
    lex.noun_ids.insert(id);
    lex.noun_list.push_back(id);
  }
  for (const char* w : kVerbs) {
    const int id = push(w);
    lex.verb_ids.insert(id);
    lex.verb_list.push_back(id);
  }
  for (const char* w : kScenarios) push(w);
  for (const char* w : kFillers) push(w);
  return lex;
}

double fract(double v) { return v - std::floor(v); }

// HSV (h in [0,1)) to RGB, s/v in [0,1].
void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double hh = fract(h) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector % 6) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

float quantize(double v) { return static_cast<float>(v); }

}  // namespace

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = build_lexicon();
  return lex;
}

const std::string& Lexicon::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
    throw ContractError("lexicon: id " + std::to_string(id) + " out of range");
  return tokens[static_cast<std::size_t>(id)];
}

int Lexicon::lookup(const std::string& raw) const {
  std::string w;
  for (char c : raw)
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '<' || c == '>' ||
        c == '_')
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (w.empty()) return unk_id;
  auto it = vocab.find(w);
  if (it != vocab.end()) return it->second;
  if (w.size() > 1 && w.back() == 's') {
    auto stem = vocab.find(w.substr(0, w.size() - 1));
    if (stem != vocab.end()) return stem->second;
  }
  return unk_id;
}

std::size_t NarrationSample::real_len() const {
  std::size_t n = 0;
  for (std::uint8_t m : pad_mask) n += m;
  return n;
}

std::pair<std::set<int>, std::set<int>> tag_tokens(const std::vector<int>& tokens,
                                                   const Lexicon& lexicon) {
  std::set<int> nouns, verbs;
  for (int id : tokens) {
    if (lexicon.noun_ids.count(id)) nouns.insert(id);
    if (lexicon.verb_ids.count(id)) verbs.insert(id);
  }
  return {nouns, verbs};
}

NarrationSample tokenize(const std::string& text, const Lexicon& lexicon,
                         std::size_t max_text_len) {
  NarrationSample s;
  s.tokens.reserve(max_text_len);
  s.tokens.push_back(lexicon.cls_id);
  std::istringstream words(text);
  std::string w;
  while (words >> w && s.tokens.size() < max_text_len)
    s.tokens.push_back(lexicon.lookup(w));
  const std::size_t real = s.tokens.size();
  s.tokens.resize(max_text_len, lexicon.pad_id);
  s.pad_mask.assign(max_text_len, 0);
  for (std::size_t i = 0; i < real; ++i) s.pad_mask[i] = 1;
  auto [nouns, verbs] = tag_tokens(s.tokens, lexicon);
  s.nouns = std::move(nouns);
  s.verbs = std::move(verbs);
  return s;
}

Tensor render_frames(std::size_t noun_index, std::size_t verb_index,
                     std::size_t scenario_index, const ModelConfig& config,
                     double noise_amp, Rng& rng) {
  const std::size_t T = config.frames, H = config.image_size,
                    W = config.image_size, C = config.channels;
  double bg[3], fg[3];
  hsv_to_rgb(0.61803398875 * static_cast<double>(scenario_index), 0.4, 0.3, bg);
  hsv_to_rgb(0.25 + 0.61803398875 * static_cast<double>(noun_index), 0.95, 0.95,
             fg);

  // Verb -> start position and per-frame displacement on the unit torus.
  const double sx = fract(0.13 + 0.37 * static_cast<double>(verb_index));
  const double sy = fract(0.29 + 0.53 * static_cast<double>(verb_index));
  const double theta =
      6.283185307179586 * fract(0.1 + 0.61803398875 * static_cast<double>(verb_index));
  const double step = 0.22;
  const double dx = std::cos(theta) * step, dy = std::sin(theta) * step;
  const double half = 0.18;  // object half-size, fraction of image

  std::vector<double> out(T * H * W * C);
  for (std::size_t t = 0; t < T; ++t) {
    const double cx = fract(sx + dx * static_cast<double>(t));
    const double cy = fract(sy + dy * static_cast<double>(t));
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double py = (static_cast<double>(i) + 0.5) / static_cast<double>(H);
        const double px = (static_cast<double>(j) + 0.5) / static_cast<double>(W);
        // toroidal distance keeps the object contiguous under wrapping
        const double ddy = std::min(std::abs(py - cy), 1.0 - std::abs(py - cy));
        const double ddx = std::min(std::abs(px - cx), 1.0 - std::abs(px - cx));
        const bool inside = ddx <= half && ddy <= half;
        for (std::size_t c = 0; c < C; ++c) {
          double v = (inside ? fg : bg)[c % 3];
          if (noise_amp > 0.0) v += noise_amp * (rng.uniform() * 2.0 - 1.0);
          out[((t * H + i) * W + j) * C + c] =
              static_cast<double>(quantize(clamp01(v)));
        }
      }
  }
  return Tensor::from_values({T, H, W, C}, std::move(out));
}

Corpus generate_corpus(const CorpusOptions& options, const ModelConfig& config) {
  if (options.n_pairs < 2)
    throw ConfigError("corpus.n_pairs: need at least 2 pairs");
  if (options.n_scenarios < 1)
    throw ConfigError("corpus.n_scenarios: need at least 1 scenario");
  if (options.n_scenarios * 2 > options.n_pairs)
    throw ConfigError(
        "corpus.n_scenarios: every scenario needs >= 2 clips, so n_pairs must "
        "be >= 2 * n_scenarios");

  const Lexicon& lex = Lexicon::builtin();
  if (config.vocab_size < lex.size())
    throw ConfigError("model.vocab_size: smaller than the builtin lexicon (" +
                      std::to_string(lex.size()) + ")");
  const std::size_t n_nouns = lex.noun_list.size();
  const std::size_t n_verbs = lex.verb_list.size();
  const bool unique_pairs = options.n_pairs <= n_nouns * n_verbs;

  Rng master(options.seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  const double noise_amp = 0.3 * (1.0 - options.signal);

  Corpus corpus;
  corpus.reserve(options.n_pairs);
  for (std::size_t i = 0; i < options.n_pairs; ++i) {
    std::size_t noun_idx = 0, verb_idx = 0;
    for (;;) {
      noun_idx = master.uniform_int(n_nouns);
      verb_idx = master.uniform_int(n_verbs);
      if (!unique_pairs || used.emplace(noun_idx, verb_idx).second) break;
    }
    const std::size_t scenario = i % options.n_scenarios;
    const double duration = 0.5 + 2.5 * master.uniform();

    std::ostringstream text;
    text << lex.word(lex.verb_list[verb_idx]) << " the "
         << lex.word(lex.noun_list[noun_idx]) << " in the "
         << kScenarios[scenario % (sizeof(kScenarios) / sizeof(kScenarios[0]))];

    CorpusPair pair;
    pair.narration = tokenize(text.str(), lex, config.max_text_len);
    Rng frame_rng = master.fork(i);
    pair.clip.frames = render_frames(noun_idx, verb_idx, scenario, config,
                                     noise_amp, frame_rng);
    pair.clip.scenario_id = static_cast<int>(scenario);
    pair.clip.duration_s = duration;
    std::ostringstream cid;
    cid << "clip_" << std::setw(6) << std::setfill('0') << i;
    pair.clip.clip_id = cid.str();
    corpus.push_back(std::move(pair));
  }
  return corpus;
}

void save_jsonl(const std::string& path, const Corpus& corpus) {
  std::ofstream meta(path, std::ios::trunc);
  if (!meta) throw IoError("cannot write " + path);
  std::ofstream blob(path + ".bin", std::ios::trunc | std::ios::binary);
  if (!blob) throw IoError("cannot write " + path + ".bin");

  std::uint64_t offset = 0;
  for (const CorpusPair& pair : corpus) {
    std::vector<int> real_tokens;
    for (std::size_t i = 0; i < pair.narration.tokens.size(); ++i)
      if (pair.narration.pad_mask[i])
        real_tokens.push_back(pair.narration.tokens[i]);
    json rec = {
        {"clip_id", pair.clip.clip_id},
        {"scenario_id", pair.clip.scenario_id},
        {"duration_s", pair.clip.duration_s},
        {"text_tokens", real_tokens},
        {"nouns", std::vector<int>(pair.narration.nouns.begin(),
                                   pair.narration.nouns.end())},
        {"verbs", std::vector<int>(pair.narration.verbs.begin(),
                                   pair.narration.verbs.end())},
        {"blob_offset", offset},
    };
    meta << rec.dump() << "\n";
    for (double v : pair.clip.frames.values()) {
      const float f = static_cast<float>(v);
      blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
    }
    offset += pair.clip.frames.size() * sizeof(float);
  }
  if (!meta || !blob) throw IoError("failed while writing corpus files");
}

Corpus load_jsonl(const std::string& path, const ModelConfig& config) {
  std::ifstream meta(path);
  if (!meta) throw IoError("cannot open " + path);
  std::ifstream blob(path + ".bin", std::ios::binary);
  if (!blob) throw IoError("cannot open " + path + ".bin");

  const std::size_t frame_count =
      config.frames * config.image_size * config.image_size * config.channels;
  blob.seekg(0, std::ios::end);
  const std::uint64_t blob_size = static_cast<std::uint64_t>(blob.tellg());

  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(meta, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      CorpusPair pair;
      pair.clip.clip_id = rec.at("clip_id").get<std::string>();
      pair.clip.scenario_id = rec.at("scenario_id").get<int>();
      pair.clip.duration_s = rec.at("duration_s").get<double>();
      const auto real_tokens = rec.at("text_tokens").get<std::vector<int>>();
      const auto nouns = rec.at("nouns").get<std::vector<int>>();
      const auto verbs = rec.at("verbs").get<std::vector<int>>();
      const std::uint64_t offset = rec.at("blob_offset").get<std::uint64_t>();

      if (real_tokens.size() > config.max_text_len)
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": text_tokens longer than max_text_len");
      pair.narration.tokens = real_tokens;
      pair.narration.tokens.resize(config.max_text_len,
                                   Lexicon::builtin().pad_id);
      pair.narration.pad_mask.assign(config.max_text_len, 0);
      for (std::size_t i = 0; i < real_tokens.size(); ++i)
        pair.narration.pad_mask[i] = 1;
      pair.narration.nouns = std::set<int>(nouns.begin(), nouns.end());
      pair.narration.verbs = std::set<int>(verbs.begin(), verbs.end());

      if (offset + frame_count * sizeof(float) > blob_size)
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": blob_offset past end of sidecar");
      blob.seekg(static_cast<std::streamoff>(offset));
      std::vector<double> frames(frame_count);
      for (std::size_t i = 0; i < frame_count; ++i) {
        float f = 0.0f;
        blob.read(reinterpret_cast<char*>(&f), sizeof(float));
        frames[i] = static_cast<double>(f);
      }
      if (!blob)
        throw ParseError(path + ":" + std::to_string(line_no) +
                         ": truncated frame payload");
      pair.clip.frames = Tensor::from_values(
          {config.frames, config.image_size, config.image_size,
           config.channels},
          std::move(frames));
      corpus.push_back(std::move(pair));
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

}  // namespace vtp
