#include "vtp/model.hpp"

#include <algorithm>
#include <cmath>

namespace vtp {

ParamGroup group_from_name(const std::string& name) {
  if (name.find(".cross_attn.") != std::string::npos)
    return ParamGroup::CrossAttention;
  if (name.rfind("heads.", 0) == 0) return ParamGroup::Head;
  return ParamGroup::Backbone;
}

Tensor ParamRegistry::add(const std::string& name, Tensor tensor) {
  if (!names_.insert(name).second)
    throw ContractError("duplicate parameter name: " + name);
  params_.push_back(Parameter{name, tensor, group_from_name(name)});
  return tensor;
}

const Parameter& ParamRegistry::at(const std::string& name) const {
  for (const Parameter& p : params_)
    if (p.name == name) return p;
  throw ContractError("unknown parameter: " + name);
}

Parameter& ParamRegistry::at(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return p;
  throw ContractError("unknown parameter: " + name);
}

bool ParamRegistry::has(const std::string& name) const {
  return names_.count(name) > 0;
}

void ParamRegistry::zero_grads() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

std::size_t ParamRegistry::total_size() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.size();
  return n;
}

std::vector<double> pad_bias(const std::vector<std::uint8_t>& pad_mask) {
  std::vector<double> bias(pad_mask.size());
  for (std::size_t i = 0; i < pad_mask.size(); ++i)
    bias[i] = pad_mask[i] ? 0.0 : kAttentionMaskBias;
  return bias;
}

namespace {

double xavier_std(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
}

Tensor linear(const Tensor& x2d, const Tensor& w, const Tensor& b) {
  return add(matmul(x2d, w), b);
}

}  // namespace

LayerNormParams::LayerNormParams(ParamRegistry& reg, const std::string& prefix,
                                 std::size_t d) {
  gain = reg.add(prefix + ".gain", Tensor::full({d}, 1.0, true));
  bias = reg.add(prefix + ".bias", Tensor::zeros({d}, true));
}

Tensor LayerNormParams::apply(const Tensor& x) const {
  return layer_norm(x, gain, bias, kLayerNormEps);
}

AttentionParams::AttentionParams(ParamRegistry& reg, const std::string& prefix,
                                 std::size_t d, std::size_t n_heads, Rng& rng)
    : heads(n_heads) {
  const double s = xavier_std(d, d);
  wq = reg.add(prefix + ".wq", Tensor::randn({d, d}, rng, s, true));
  bq = reg.add(prefix + ".bq", Tensor::zeros({d}, true));
  wk = reg.add(prefix + ".wk", Tensor::randn({d, d}, rng, s, true));
  bk = reg.add(prefix + ".bk", Tensor::zeros({d}, true));
  wv = reg.add(prefix + ".wv", Tensor::randn({d, d}, rng, s, true));
  bv = reg.add(prefix + ".bv", Tensor::zeros({d}, true));
  wo = reg.add(prefix + ".wo", Tensor::randn({d, d}, rng, s, true));
  bo = reg.add(prefix + ".bo", Tensor::zeros({d}, true));
}

Tensor multi_head_attention(const AttentionParams& p, const Tensor& queries,
                            const Tensor& keys_values,
                            const std::vector<double>* key_bias) {
  const bool batched = queries.rank() == 3;
  Tensor q_in = batched ? queries : reshape(queries, {1, queries.shape()[0],
                                                      queries.shape()[1]});
  Tensor kv_in = keys_values.rank() == 3
                     ? keys_values
                     : reshape(keys_values, {1, keys_values.shape()[0],
                                             keys_values.shape()[1]});
  const std::size_t B = q_in.shape()[0];
  if (kv_in.shape()[0] != B)
    throw ShapeError("attention: query/key batch extents disagree");
  const std::size_t n_q = q_in.shape()[1], n_k = kv_in.shape()[1];
  const std::size_t d = q_in.shape()[2];
  const std::size_t H = p.heads, hd = d / H;

  auto project = [&](const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t n) {
    Tensor flat = linear(reshape(x, {B * n, d}), w, b);
    // [B, n, H, hd] -> [B, H, n, hd] -> [B*H, n, hd]
    return reshape(permute(reshape(flat, {B, n, H, hd}), {0, 2, 1, 3}),
                   {B * H, n, hd});
  };

  Tensor q = project(q_in, p.wq, p.bq, n_q);
  Tensor k = project(kv_in, p.wk, p.bk, n_k);
  Tensor v = project(kv_in, p.wv, p.bv, n_k);

  Tensor scores = scale(matmul(q, permute(k, {0, 2, 1})),
                        1.0 / std::sqrt(static_cast<double>(hd)));
  if (key_bias) {
    if (key_bias->size() != n_k)
      throw ShapeError("attention: key bias length must equal key count");
    scores = add(scores, Tensor::from_values({n_k}, *key_bias));
  }
  Tensor attn = softmax(scores, 2);
  Tensor ctx = matmul(attn, v);  // [B*H, n_q, hd]
  ctx = reshape(permute(reshape(ctx, {B, H, n_q, hd}), {0, 2, 1, 3}),
                {B * n_q, d});
  Tensor out = reshape(linear(ctx, p.wo, p.bo), {B, n_q, d});
  return batched ? out : reshape(out, {n_q, d});
}

FfnParams::FfnParams(ParamRegistry& reg, const std::string& prefix,
                     std::size_t d, std::size_t d_ff, Rng& rng) {
  w1 = reg.add(prefix + ".w1", Tensor::randn({d, d_ff}, rng,
                                             xavier_std(d, d_ff), true));
  b1 = reg.add(prefix + ".b1", Tensor::zeros({d_ff}, true));
  w2 = reg.add(prefix + ".w2", Tensor::randn({d_ff, d}, rng,
                                             xavier_std(d_ff, d), true));
  b2 = reg.add(prefix + ".b2", Tensor::zeros({d}, true));
}

Tensor FfnParams::apply(const Tensor& x) const {
  return linear(gelu(linear(x, w1, b1)), w2, b2);
}

ProjectorParams::ProjectorParams(ParamRegistry& reg, const std::string& prefix,
                                 std::size_t d,
                                 const std::vector<std::size_t>& dims,
                                 Rng& rng) {
  std::size_t in = d;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    weights.push_back(reg.add(prefix + "." + std::to_string(i) + ".weight",
                              Tensor::randn({in, dims[i]}, rng,
                                            xavier_std(in, dims[i]), true)));
    biases.push_back(reg.add(prefix + "." + std::to_string(i) + ".bias",
                             Tensor::zeros({dims[i]}, true)));
    in = dims[i];
  }
}

Tensor ProjectorParams::apply(const Tensor& pooled) const {
  Tensor x = pooled.rank() == 1 ? reshape(pooled, {1, pooled.size()}) : pooled;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    x = linear(x, weights[i], biases[i]);
    if (i + 1 < weights.size()) x = gelu(x);
  }
  return reshape(l2_normalize(x), {x.shape()[1]});
}

GatedCrossAttention::GatedCrossAttention(ParamRegistry& reg,
                                         const std::string& prefix,
                                         std::size_t d, std::size_t heads,
                                         bool learnable, Rng& rng)
    : ln_query(reg, prefix + ".ln_query", d),
      ln_context(reg, prefix + ".ln_context", d),
      attn(reg, prefix + ".attn", d, heads, rng) {
  alpha = reg.add(prefix + ".alpha", Tensor::zeros({1}, learnable));
}

Tensor GatedCrossAttention::apply(const Tensor& query_tokens,
                                  const Tensor& context,
                                  const std::vector<double>* context_bias,
                                  bool post_norm) const {
  Tensor ctx = ln_context.apply(context);
  Tensor out;
  if (post_norm)
    out = ln_query.apply(multi_head_attention(attn, query_tokens, ctx,
                                              context_bias));
  else
    out = multi_head_attention(attn, ln_query.apply(query_tokens), ctx,
                               context_bias);
  return scale_by(out, alpha);
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model;
  const std::size_t S = config_.patches_per_frame();

  patch_weight_ = params_.add(
      "video.patch_embed.weight",
      Tensor::randn({config_.patch_dim(), d}, rng,
                    xavier_std(config_.patch_dim(), d), true));
  patch_bias_ = params_.add("video.patch_embed.bias", Tensor::zeros({d}, true));
  cls_token_ =
      params_.add("video.cls_token", Tensor::randn({d}, rng, 0.02, true));
  pos_spatial_ = params_.add("video.pos_spatial",
                             Tensor::randn({S + 1, d}, rng, 0.01, true));
  pos_temporal_ = params_.add(
      "video.pos_temporal", Tensor::randn({config_.frames, d}, rng, 0.01, true));

  for (std::size_t k = 0; k < config_.n_layers; ++k) {
    const std::string prefix = "video.layers." + std::to_string(k);
    VideoLayer layer;
    layer.ln_temporal = LayerNormParams(params_, prefix + ".temporal.ln", d);
    layer.temporal_attn =
        AttentionParams(params_, prefix + ".temporal.attn", d,
                        config_.n_heads, rng);
    layer.ln_spatial = LayerNormParams(params_, prefix + ".spatial.ln", d);
    layer.spatial_attn = AttentionParams(params_, prefix + ".spatial.attn", d,
                                         config_.n_heads, rng);
    layer.ln_ffn = LayerNormParams(params_, prefix + ".ffn.ln", d);
    layer.ffn = FfnParams(params_, prefix + ".ffn", d, config_.ffn_dim(), rng);
    if (k >= config_.n_layers - config_.n_fused)
      layer.cross_attn.emplace(params_, prefix + ".cross_attn", d,
                               config_.n_heads, config_.learnable_alpha, rng);
    video_layers_.push_back(std::move(layer));
  }
  video_final_ln_ = LayerNormParams(params_, "video.final_ln", d);
  video_projector_ = ProjectorParams(params_, "video.projector", d,
                                     config_.projector_dims, rng);

  token_embedding_ =
      params_.add("text.token_embedding",
                  Tensor::randn({config_.vocab_size, d}, rng, 0.02, true));
  pos_text_ = params_.add(
      "text.pos_embedding",
      Tensor::randn({config_.max_text_len, d}, rng, 0.01, true));
  for (std::size_t k = 0; k < config_.n_layers; ++k) {
    const std::string prefix = "text.layers." + std::to_string(k);
    TextLayer layer;
    layer.ln_attn = LayerNormParams(params_, prefix + ".attn.ln", d);
    layer.attn = AttentionParams(params_, prefix + ".attn", d, config_.n_heads,
                                 rng);
    layer.ln_ffn = LayerNormParams(params_, prefix + ".ffn.ln", d);
    layer.ffn = FfnParams(params_, prefix + ".ffn", d, config_.ffn_dim(), rng);
    if (k >= config_.n_layers - config_.n_fused)
      layer.cross_attn.emplace(params_, prefix + ".cross_attn", d,
                               config_.n_heads, config_.learnable_alpha, rng);
    text_layers_.push_back(std::move(layer));
  }
  text_final_ln_ = LayerNormParams(params_, "text.final_ln", d);
  text_projector_ = ProjectorParams(params_, "text.projector", d,
                                    config_.projector_dims, rng);

  vocab_weight_ = params_.add(
      "heads.vocab.weight",
      Tensor::randn({d, config_.vocab_size}, rng,
                    xavier_std(d, config_.vocab_size), true));
  vocab_bias_ =
      params_.add("heads.vocab.bias", Tensor::zeros({config_.vocab_size}, true));
  vtm_weight_ = params_.add(
      "heads.vtm.weight",
      Tensor::randn({2 * d, 1}, rng, xavier_std(2 * d, 1), true));
  vtm_bias_ = params_.add("heads.vtm.bias", Tensor::zeros({1}, true));
}

void Model::set_alpha(double value) {
  for (Parameter& p : params_.all())
    if (p.name.size() > 6 &&
        p.name.compare(p.name.size() - 6, 6, ".alpha") == 0)
      p.tensor.mutable_values()[0] = value;
}

std::vector<double> Model::alpha_values() const {
  std::vector<double> out;
  for (const Parameter& p : params_.all())
    if (p.name.size() > 6 &&
        p.name.compare(p.name.size() - 6, 6, ".alpha") == 0)
      out.push_back(p.tensor.values()[0]);
  return out;
}

Tensor Model::embed_video_tokens(const Tensor& frames) const {
  const std::size_t T = config_.frames, H = config_.image_size,
                    W = config_.image_size, C = config_.channels;
  const std::size_t P = config_.patch_size;
  if (frames.shape() != Shape{T, H, W, C})
    throw ShapeError("embed_video_tokens: frames must be " +
                     shape_str({T, H, W, C}) + ", got " +
                     shape_str(frames.shape()));
  const std::size_t side = H / P;
  const std::size_t S = side * side;

  // Rearrange pixels into [T*S, P*P*C] patch rows.
  std::vector<double> patches(T * S * config_.patch_dim());
  const auto& fv = frames.values();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::size_t patch = (i / P) * side + (j / P);
        const std::size_t offset = ((i % P) * P + (j % P)) * C;
        for (std::size_t c = 0; c < C; ++c)
          patches[(t * S + patch) * config_.patch_dim() + offset + c] =
              fv[((t * H + i) * W + j) * C + c];
      }

  Tensor patch_rows = Tensor::from_values({T * S, config_.patch_dim()},
                                          std::move(patches), false,
                                          config_.precision);
  Tensor tokens = linear(patch_rows, patch_weight_, patch_bias_);

  std::vector<int> spatial_rows(T * S), temporal_rows(T * S);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      spatial_rows[t * S + s] = static_cast<int>(1 + s);
      temporal_rows[t * S + s] = static_cast<int>(t);
    }
  tokens = add(tokens, gather_rows(pos_spatial_, spatial_rows));
  tokens = add(tokens, gather_rows(pos_temporal_, temporal_rows));

  Tensor cls = add(reshape(cls_token_, {1, config_.d_model}),
                   gather_rows(pos_spatial_, {0}));
  return concat({cls, tokens}, 0);
}

Tensor Model::embed_text_tokens(const std::vector<int>& tokens) const {
  if (tokens.size() != config_.max_text_len)
    throw ShapeError("embed_text_tokens: expected " +
                     std::to_string(config_.max_text_len) + " token ids");
  return add(embedding_lookup(token_embedding_, tokens), pos_text_);
}

Tensor Model::space_time_block(std::size_t layer, const Tensor& x) const {
  const VideoLayer& ly = video_layers_.at(layer);
  const std::size_t T = config_.frames, S = config_.patches_per_frame();
  const std::size_t d = config_.d_model;
  if (x.shape() != Shape{T * S + 1, d})
    throw ShapeError("space_time_block: token grid must be " +
                     shape_str({T * S + 1, d}));
  const bool post = config_.post_norm;

  // Temporal self-attention across the T copies of each spatial location.
  // The classification token has no temporal copies and passes through.
  Tensor rest = slice_rows(x, 1, T * S + 1);
  Tensor t_in = post ? rest : ly.ln_temporal.apply(rest);
  Tensor seqs = permute(reshape(t_in, {T, S, d}), {1, 0, 2});  // [S, T, d]
  Tensor t_out3 = multi_head_attention(ly.temporal_attn, seqs, seqs);
  Tensor t_out = reshape(permute(t_out3, {1, 0, 2}), {T * S, d});
  if (post) t_out = ly.ln_temporal.apply(t_out);
  Tensor xhat = concat({slice_rows(x, 0, 1), add(rest, t_out)}, 0);

  // Spatial self-attention within each frame; the classification token joins
  // every frame and its outputs are averaged across frames.
  Tensor s_in = post ? xhat : ly.ln_spatial.apply(xhat);
  Tensor cls_row = reshape(slice_rows(s_in, 0, 1), {d});
  std::vector<Tensor> cls_copies(T, cls_row);
  Tensor cls_batch = reshape(stack_rows(cls_copies), {T, std::size_t{1}, d});
  Tensor frame_tokens = reshape(slice_rows(s_in, 1, T * S + 1), {T, S, d});
  Tensor frames_in = concat({cls_batch, frame_tokens}, 1);  // [T, S+1, d]
  Tensor s_out3 = multi_head_attention(ly.spatial_attn, frames_in, frames_in);

  Tensor by_pos = permute(s_out3, {1, 0, 2});  // [S+1, T, d]
  Tensor cls_out = mean(reshape(slice_rows(by_pos, 0, 1), {T, d}), 0);
  Tensor rest_out = reshape(permute(slice_rows(by_pos, 1, S + 1), {1, 0, 2}),
                            {T * S, d});
  Tensor s_out = concat({reshape(cls_out, {1, d}), rest_out}, 0);
  if (post) s_out = ly.ln_spatial.apply(s_out);

  Tensor base = config_.residual_from_xhat ? xhat : x;
  return add(base, s_out);
}

Tensor Model::text_attention(std::size_t layer, const Tensor& x,
                             const std::vector<std::uint8_t>& pad_mask) const {
  const TextLayer& ly = text_layers_.at(layer);
  if (std::find(pad_mask.begin(), pad_mask.end(), std::uint8_t{1}) ==
      pad_mask.end())
    throw ContractError("text_attention: all positions are padded");
  const std::vector<double> bias = pad_bias(pad_mask);
  if (config_.post_norm)
    return ly.ln_attn.apply(multi_head_attention(ly.attn, x, x, &bias));
  Tensor normed = ly.ln_attn.apply(x);
  return multi_head_attention(ly.attn, normed, normed, &bias);
}

Tensor Model::video_layer_forward(std::size_t layer, const Tensor& x,
                                  const Tensor* text_context,
                                  const std::vector<double>* text_bias) const {
  const VideoLayer& ly = video_layers_.at(layer);
  Tensor z = space_time_block(layer, x);
  Tensor sum = add(x, z);
  if (text_context) {
    if (!ly.cross_attn)
      throw ContractError("video layer " + std::to_string(layer) +
                          " has no cross-attention block");
    sum = add(sum, ly.cross_attn->apply(z, *text_context, text_bias,
                                        config_.post_norm));
  }
  Tensor ffn_out = config_.post_norm
                       ? ly.ln_ffn.apply(ly.ffn.apply(sum))
                       : ly.ffn.apply(ly.ln_ffn.apply(sum));
  return add(sum, ffn_out);
}

Tensor Model::text_layer_forward(std::size_t layer, const Tensor& x,
                                 const std::vector<double>* self_bias,
                                 const Tensor* video_context) const {
  const TextLayer& ly = text_layers_.at(layer);
  Tensor xhat;
  if (config_.post_norm)
    xhat = ly.ln_attn.apply(multi_head_attention(ly.attn, x, x, self_bias));
  else {
    Tensor normed = ly.ln_attn.apply(x);
    xhat = multi_head_attention(ly.attn, normed, normed, self_bias);
  }
  Tensor sum = add(x, xhat);
  if (video_context) {
    if (!ly.cross_attn)
      throw ContractError("text layer " + std::to_string(layer) +
                          " has no cross-attention block");
    sum = add(sum, ly.cross_attn->apply(xhat, *video_context, nullptr,
                                        config_.post_norm));
  }
  Tensor ffn_out = config_.post_norm
                       ? ly.ln_ffn.apply(ly.ffn.apply(sum))
                       : ly.ffn.apply(ly.ln_ffn.apply(sum));
  return add(sum, ffn_out);
}

Tensor Model::video_bottom(const Tensor& frames) const {
  Tensor x = embed_video_tokens(frames);
  const std::size_t bottom = config_.n_layers - config_.n_fused;
  for (std::size_t k = 0; k < bottom; ++k)
    x = video_layer_forward(k, x, nullptr, nullptr);
  return x;
}

Tensor Model::text_bottom(const std::vector<int>& tokens,
                          const std::vector<std::uint8_t>& pad_mask) const {
  if (std::find(pad_mask.begin(), pad_mask.end(), std::uint8_t{1}) ==
      pad_mask.end())
    throw ContractError("text_bottom: all positions are padded");
  Tensor x = embed_text_tokens(tokens);
  const std::vector<double> bias = pad_bias(pad_mask);
  const std::size_t bottom = config_.n_layers - config_.n_fused;
  for (std::size_t k = 0; k < bottom; ++k)
    x = text_layer_forward(k, x, &bias, nullptr);
  return x;
}

TowerOutputs Model::finish(Tensor video_tokens, Tensor text_tokens) const {
  TowerOutputs out;
  out.video_tokens = video_final_ln_.apply(video_tokens);
  out.text_tokens = text_final_ln_.apply(text_tokens);
  out.video_cls = reshape(slice_rows(out.video_tokens, 0, 1),
                          {config_.d_model});
  out.text_cls = reshape(slice_rows(out.text_tokens, 0, 1), {config_.d_model});
  out.video_embed = video_projector_.apply(out.video_cls);
  out.text_embed = text_projector_.apply(out.text_cls);
  return out;
}

TowerOutputs Model::dual_forward(const Tensor& frames,
                                 const NarrationSample& narration) const {
  Tensor v = embed_video_tokens(frames);
  for (std::size_t k = 0; k < config_.n_layers; ++k)
    v = video_layer_forward(k, v, nullptr, nullptr);

  const std::vector<double> bias = pad_bias(narration.pad_mask);
  Tensor t = embed_text_tokens(narration.tokens);
  for (std::size_t k = 0; k < config_.n_layers; ++k)
    t = text_layer_forward(k, t, &bias, nullptr);
  return finish(std::move(v), std::move(t));
}

TowerOutputs Model::fused_top(const Tensor& video_tokens,
                              const Tensor& text_tokens,
                              const std::vector<std::uint8_t>& pad_mask) const {
  if (!video_tokens.defined() || !text_tokens.defined())
    throw ContractError("fused_top: both towers are required in fused mode");
  const std::vector<double> bias = pad_bias(pad_mask);
  Tensor v = video_tokens;
  Tensor t = text_tokens;
  // Video-first within each fused depth: the text layer attends to the
  // completed video output of the same depth.
  for (std::size_t k = config_.n_layers - config_.n_fused;
       k < config_.n_layers; ++k) {
    Tensor v_next = video_layer_forward(k, v, &t, &bias);
    t = text_layer_forward(k, t, &bias, &v_next);
    v = std::move(v_next);
  }
  return finish(std::move(v), std::move(t));
}

TowerOutputs Model::fused_forward(const Tensor& frames,
                                  const std::vector<int>& tokens,
                                  const std::vector<std::uint8_t>& pad_mask) const {
  return fused_top(video_bottom(frames), text_bottom(tokens, pad_mask),
                   pad_mask);
}

TowerOutputs Model::fused_forward(const Tensor& frames,
                                  const NarrationSample& narration) const {
  return fused_forward(frames, narration.tokens, narration.pad_mask);
}

TowerOutputs Model::forward(const Tensor& frames,
                            const NarrationSample& narration,
                            FusionMode mode) const {
  return mode == FusionMode::Dual ? dual_forward(frames, narration)
                                  : fused_forward(frames, narration);
}

Tensor Model::embed_video(const Tensor& frames) const {
  Tensor v = embed_video_tokens(frames);
  for (std::size_t k = 0; k < config_.n_layers; ++k)
    v = video_layer_forward(k, v, nullptr, nullptr);
  Tensor pooled = reshape(slice_rows(video_final_ln_.apply(v), 0, 1),
                          {config_.d_model});
  return video_projector_.apply(pooled);
}

Tensor Model::embed_text(const NarrationSample& narration) const {
  const std::vector<double> bias = pad_bias(narration.pad_mask);
  Tensor t = embed_text_tokens(narration.tokens);
  for (std::size_t k = 0; k < config_.n_layers; ++k)
    t = text_layer_forward(k, t, &bias, nullptr);
  Tensor pooled = reshape(slice_rows(text_final_ln_.apply(t), 0, 1),
                          {config_.d_model});
  return text_projector_.apply(pooled);
}

Tensor Model::vocab_logits(const Tensor& text_tokens,
                           const std::vector<int>& positions) const {
  return linear(gather_rows(text_tokens, positions), vocab_weight_,
                vocab_bias_);
}

Tensor Model::vtm_logit(const Tensor& video_cls, const Tensor& text_cls) const {
  Tensor joint = concat({video_cls, text_cls}, 0);  // [2d]
  return reshape(linear(reshape(joint, {1, 2 * config_.d_model}), vtm_weight_,
                        vtm_bias_),
                 {1});
}

Tensor Model::project_video(const Tensor& cls) const {
  return video_projector_.apply(cls);
}

Tensor Model::project_text(const Tensor& cls) const {
  return text_projector_.apply(cls);
}

}  // namespace vtp
