#include "grtrack/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "grtrack/ops.hpp"

namespace grtrack {

const char* token_kind_name(TokenKind kind) {
  switch (kind) {
    case TokenKind::kAnchor: return "anchor";
    case TokenKind::kTemplate: return "template";
    case TokenKind::kSearch: return "search";
  }
  return "?";
}

void TokenSeq::validate() const {
  if (!embeddings.defined()) {
    if (!provenance.empty()) throw DimensionError("TokenSeq: provenance without embeddings");
    return;
  }
  if (embeddings.rank() != 2 || embeddings.dim(0) != provenance.size()) {
    throw DimensionError("TokenSeq: embeddings " + shape_str(embeddings.shape()) + " vs " +
                         std::to_string(provenance.size()) + " provenance rows");
  }
}

TokenSeq concat_tokens(const TokenSeq& a, const TokenSeq& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.dim() != b.dim()) throw DimensionError("concat_tokens: embedding dims differ");
  TokenSeq out;
  std::vector<Tensor> parts{a.embeddings, b.embeddings};
  out.embeddings = ops::concat_rows(parts);
  out.provenance = a.provenance;
  out.provenance.insert(out.provenance.end(), b.provenance.begin(), b.provenance.end());
  return out;
}

TokenSeq gather_tokens(const TokenSeq& seq, std::span<const std::size_t> rows) {
  TokenSeq out;
  out.embeddings = ops::gather_rows(seq.embeddings, rows);
  out.provenance.reserve(rows.size());
  for (auto r : rows) out.provenance.push_back(seq.provenance.at(r));
  return out;
}

TokenSeq detach_tokens(const TokenSeq& seq) {
  TokenSeq out;
  if (seq.embeddings.defined()) out.embeddings = seq.embeddings.clone();
  out.provenance = seq.provenance;
  return out;
}

// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (depth == 0) fail("depth must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) fail("heads must divide dim");
  if (patch_size == 0) fail("patch size must be positive");
  if (template_size % patch_size != 0) fail("template size must be divisible by the patch size");
  if (search_size % patch_size != 0) fail("search size must be divisible by the patch size");
  if (relevance_layers.size() != keep_ratios.size()) fail("one keep ratio per relevance layer required");
  for (std::size_t i = 0; i < relevance_layers.size(); ++i) {
    if (relevance_layers[i] < 1 || relevance_layers[i] > depth) fail("relevance layer outside [1, depth]");
    if (i > 0 && relevance_layers[i] <= relevance_layers[i - 1]) fail("relevance layers must be increasing");
    if (!(keep_ratios[i] > 0.0 && keep_ratios[i] <= 1.0)) fail("keep ratios must lie in (0, 1]");
  }
  if (ranking_hidden.empty()) fail("ranking MLP needs at least one hidden layer");
  if (head_channels.size() != 2) fail("head needs exactly two hidden channel counts (three conv layers)");
}

bool EncoderConfig::is_relevance_layer(std::size_t layer_1based) const {
  return std::find(relevance_layers.begin(), relevance_layers.end(), layer_1based) != relevance_layers.end();
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper() {
  EncoderConfig c;
  c.depth = 12;
  c.dim = 768;
  c.heads = 12;
  c.relevance_layers = {4, 7, 10};
  c.patch_size = 16;
  c.template_size = 128;
  c.search_size = 256;
  c.ranking_hidden = {384, 192};
  c.head_channels = {256, 128};
  return c;
}

// ---------------------------------------------------------------------------

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) {
    // truncated at two standard deviations
    double s;
    do {
      s = rng.normal();
    } while (std::fabs(s) > 2.0);
    v = s * stddev;
  }
  return Tensor(std::move(shape), std::move(data), true);
}

double lecun_std(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, double stddev) {
  return Linear{normal_tensor({in, out}, rng, stddev), Tensor::zeros({out}, true)};
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor LayerNormParams::operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return LayerNormParams{Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

void LayerNormParams::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

AttentionParams AttentionParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  const double s = lecun_std(dim);
  AttentionParams p{Linear::init(dim, dim, rng, s), Linear::init(dim, dim, rng, s), Linear::init(dim, dim, rng, s),
                    Linear::init(dim, dim, rng, s), heads};
  return p;
}

void AttentionParams::collect(const std::string& prefix, ParamList& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  proj.collect(prefix + ".proj", out);
}

BlockParams BlockParams::init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  BlockParams b;
  b.norm1 = LayerNormParams::init(dim);
  b.attn = AttentionParams::init(dim, heads, rng);
  b.norm2 = LayerNormParams::init(dim);
  b.fc1 = Linear::init(dim, dim * mlp_ratio, rng, lecun_std(dim));
  b.fc2 = Linear::init(dim * mlp_ratio, dim, rng, lecun_std(dim * mlp_ratio));
  return b;
}

void BlockParams::collect(const std::string& prefix, ParamList& out) const {
  norm1.collect(prefix + ".norm1", out);
  attn.collect(prefix + ".attn", out);
  norm2.collect(prefix + ".norm2", out);
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

PatchEmbedParams PatchEmbedParams::init(const EncoderConfig& cfg, Rng& rng) {
  PatchEmbedParams p;
  p.proj = Linear::init(cfg.patch_dim(), cfg.dim, rng, lecun_std(cfg.patch_dim()));
  p.pos_template = normal_tensor({cfg.template_tokens(), cfg.dim}, rng, 0.02);
  p.pos_search = normal_tensor({cfg.search_tokens(), cfg.dim}, rng, 0.02);
  return p;
}

void PatchEmbedParams::collect(const std::string& prefix, ParamList& out) const {
  proj.collect(prefix + ".proj", out);
  out.push_back({prefix + ".pos_template", pos_template});
  out.push_back({prefix + ".pos_search", pos_search});
}

// ---------------------------------------------------------------------------

Tensor patchify(std::span<const double> chw, std::size_t height, std::size_t width, std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("patchify: " + std::to_string(height) + "x" + std::to_string(width) +
                      " image is not divisible into " + std::to_string(patch) + "px patches");
  }
  if (chw.size() != 3 * height * width) throw DimensionError("patchify: expected a 3-channel image");
  const std::size_t gh = height / patch, gw = width / patch;
  const std::size_t pd = 3 * patch * patch;
  std::vector<double> out(gh * gw * pd);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* dst = out.data() + (gy * gw + gx) * pd;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x)
            *dst++ = chw[(c * height + gy * patch + y) * width + gx * patch + x];
    }
  return Tensor({gh * gw, pd}, std::move(out));
}

std::vector<double> unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch) {
  const std::size_t gh = height / patch, gw = width / patch;
  const std::size_t pd = 3 * patch * patch;
  if (patches.rank() != 2 || patches.dim(0) != gh * gw || patches.dim(1) != pd) {
    throw DimensionError("unpatchify: patch tensor " + shape_str(patches.shape()) + " does not tile the image");
  }
  std::vector<double> chw(3 * height * width);
  const auto src = patches.data();
  std::size_t i = 0;
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) chw[(c * height + gy * patch + y) * width + gx * patch + x] = src[i++];
  return chw;
}

TokenSeq embed(const Tensor& patches, const PatchEmbedParams& params, ImageRole role, int frame_id, TokenKind kind) {
  const Tensor& pos = role == ImageRole::kTemplate ? params.pos_template : params.pos_search;
  if (patches.dim(0) != pos.dim(0)) {
    throw DimensionError("embed: " + std::to_string(patches.dim(0)) + " patches but position table has " +
                         std::to_string(pos.dim(0)) + " rows");
  }
  TokenSeq seq;
  seq.embeddings = ops::add(params.proj(patches), pos);
  seq.provenance.resize(patches.dim(0));
  for (std::size_t i = 0; i < seq.provenance.size(); ++i) {
    seq.provenance[i] = {frame_id, static_cast<int>(i), kind};
  }
  return seq;
}

// ---------------------------------------------------------------------------

Qkv project_qkv(const Tensor& x, const BlockParams& block) {
  auto h = block.norm1(x);
  return Qkv{block.attn.q(h), block.attn.k(h), block.attn.v(h)};
}

Qkv gather_qkv(const Qkv& qkv, std::span<const std::size_t> rows) {
  return Qkv{ops::gather_rows(qkv.q, rows), ops::gather_rows(qkv.k, rows), ops::gather_rows(qkv.v, rows)};
}

std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads) {
  if (q.dim(1) != k.dim(1) || q.dim(1) % heads != 0) {
    throw DimensionError("attention_weights: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", heads " + std::to_string(heads));
  }
  const std::size_t d = q.dim(1) / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tensor> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = ops::slice_cols(q, h * d, d);
    auto kh = ops::slice_cols(k, h * d, d);
    out.push_back(ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale), 1));
  }
  return out;
}

std::vector<Tensor> mask_key_columns(std::span<const Tensor> weights, const Tensor& mask, bool renormalize) {
  std::vector<Tensor> out;
  out.reserve(weights.size());
  for (const auto& w : weights) {
    auto m = ops::mul_cols(w, mask);
    if (renormalize) {
      auto inv = ops::div(Tensor::full({m.dim(0)}, 1.0), ops::add_scalar(ops::row_sums(m), 1e-12));
      m = ops::mul_rows(m, inv);
    }
    out.push_back(std::move(m));
  }
  return out;
}

Tensor attention_mix(std::span<const Tensor> weights, const Tensor& v, const AttentionParams& params) {
  const std::size_t heads = weights.size();
  const std::size_t d = v.dim(1) / heads;
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    if (weights[h].dim(1) != v.dim(0)) throw DimensionError("attention_mix: key/value length mismatch");
    parts.push_back(ops::matmul(weights[h], ops::slice_cols(v, h * d, d)));
  }
  return params.proj(ops::concat_cols(parts));
}

MhaResult mha(const TokenSeq& q, const TokenSeq& k, const TokenSeq& v, const AttentionParams& params) {
  if (k.size() != v.size()) {
    throw DimensionError("mha: key and value sequences differ in length (" + std::to_string(k.size()) + " vs " +
                         std::to_string(v.size()) + ")");
  }
  if (params.heads == 0 || q.dim() % params.heads != 0) throw DimensionError("mha: head count must divide C");
  auto w = attention_weights(params.q(q.embeddings), params.k(k.embeddings), params.heads);
  MhaResult r;
  r.out.embeddings = attention_mix(w, params.v(v.embeddings), params);
  r.out.provenance = q.provenance;
  r.weights = ops::stack(w);
  return r;
}

Tensor block_from_qkv(const Tensor& x, const Qkv& qkv, const BlockParams& block, const Tensor& key_mask,
                      bool renormalize, std::vector<Tensor>* weights_out) {
  auto w = attention_weights(qkv.q, qkv.k, block.attn.heads);
  if (weights_out) *weights_out = w;
  if (key_mask.defined()) w = mask_key_columns(w, key_mask, renormalize);
  auto o = ops::add(x, attention_mix(w, qkv.v, block.attn));
  return ops::add(o, block.fc2(ops::gelu(block.fc1(block.norm2(o)))));
}

Tensor vit_block(const Tensor& x, const BlockParams& block, const Tensor& key_mask, bool renormalize,
                 std::vector<Tensor>* weights_out) {
  return block_from_qkv(x, project_qkv(x, block), block, key_mask, renormalize, weights_out);
}

TokenSeq vit_block(const TokenSeq& tokens, const BlockParams& block) {
  return TokenSeq{vit_block(tokens.embeddings, block), tokens.provenance};
}

}  // namespace grtrack
