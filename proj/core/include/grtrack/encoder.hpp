#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "grtrack/rng.hpp"
#include "grtrack/tensor.hpp"

namespace grtrack {

// ---------------------------------------------------------------------------
// Tokens

enum class TokenKind : std::uint8_t { kAnchor = 0, kTemplate = 1, kSearch = 2 };

const char* token_kind_name(TokenKind kind);

struct TokenProvenance {
  int frame_id = 0;
  int spatial_index = 0;
  TokenKind kind = TokenKind::kTemplate;

  bool operator==(const TokenProvenance&) const = default;
};

/// Embeddings [N, C] plus one provenance record per row.
struct TokenSeq {
  Tensor embeddings;
  std::vector<TokenProvenance> provenance;

  std::size_t size() const { return provenance.size(); }
  std::size_t dim() const { return embeddings.dim(1); }
  bool empty() const { return provenance.empty(); }

  /// Throws DimensionError when rows and provenance disagree.
  void validate() const;
};

TokenSeq concat_tokens(const TokenSeq& a, const TokenSeq& b);
TokenSeq gather_tokens(const TokenSeq& seq, std::span<const std::size_t> rows);
/// Copies values and provenance; the result carries no graph history.
TokenSeq detach_tokens(const TokenSeq& seq);

// ---------------------------------------------------------------------------
// Configuration

struct EncoderConfig {
  std::size_t depth = 6;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::vector<std::size_t> relevance_layers{2, 4, 5};  // 1-based
  std::size_t patch_size = 8;
  std::size_t template_size = 32;  // square side, pixels
  std::size_t search_size = 64;
  std::vector<double> keep_ratios{0.9, 0.8, 0.7};
  std::vector<std::size_t> ranking_hidden{32, 16};
  std::vector<std::size_t> head_channels{32, 16};
  std::size_t token_filter_blocks = 3;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  std::size_t template_tokens() const { return (template_size / patch_size) * (template_size / patch_size); }
  std::size_t search_tokens() const { return (search_size / patch_size) * (search_size / patch_size); }
  std::size_t search_grid() const { return search_size / patch_size; }
  std::size_t template_grid() const { return template_size / patch_size; }
  std::size_t head_dim() const { return dim / heads; }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  bool is_relevance_layer(std::size_t layer_1based) const;

  /// Desk-scale profile: depth 6, C 64, 4 heads, patch 8, 64px search, 32px template.
  static EncoderConfig desk();
  /// Full-size profile: depth 12, C 768, 12 heads, patch 16, 256px search, 128px template.
  static EncoderConfig paper();
};

// ---------------------------------------------------------------------------
// Parameters

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor operator()(const Tensor& x) const;
  static Linear init(std::size_t in, std::size_t out, Rng& rng, double stddev = 0.02);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;

  Tensor operator()(const Tensor& x) const;
  static LayerNormParams init(std::size_t dim);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct AttentionParams {
  Linear q, k, v, proj;
  std::size_t heads = 1;

  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
struct BlockParams {
  LayerNormParams norm1;
  AttentionParams attn;
  LayerNormParams norm2;
  Linear fc1, fc2;

  static BlockParams init(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct PatchEmbedParams {
  Linear proj;            // [3 S^2, C]
  Tensor pos_template;    // [N_z, C]
  Tensor pos_search;      // [N_x, C]

  static PatchEmbedParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

// ---------------------------------------------------------------------------
// Patches

/// Splits a CHW image (3 channels) into non-overlapping SxS patches in
/// row-major grid order. Each row holds one patch flattened as (c, y, x).
Tensor patchify(std::span<const double> chw, std::size_t height, std::size_t width, std::size_t patch);
/// Inverse of patchify.
std::vector<double> unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t patch);

enum class ImageRole { kTemplate, kSearch };

/// Linear patch projection plus the per-role position table.
TokenSeq embed(const Tensor& patches, const PatchEmbedParams& params, ImageRole role, int frame_id, TokenKind kind);

// ---------------------------------------------------------------------------
// Attention

struct Qkv {
  Tensor q, k, v;  // [N, C] each
};

/// LayerNorm then q/k/v projections for every token.
Qkv project_qkv(const Tensor& x, const BlockParams& block);
Qkv gather_qkv(const Qkv& qkv, std::span<const std::size_t> rows);

/// Per-head post-softmax weights [N_q, N_kv] (queries are rows).
std::vector<Tensor> attention_weights(const Tensor& q, const Tensor& k, std::size_t heads);

/// Multiplies every head's key column j by mask[j]. With `renormalize`,
/// each query row is rescaled to sum to one again.
std::vector<Tensor> mask_key_columns(std::span<const Tensor> weights, const Tensor& mask, bool renormalize);

/// Heads' weighted values, concatenated and output-projected: [N_q, C].
Tensor attention_mix(std::span<const Tensor> weights, const Tensor& v, const AttentionParams& params);

struct MhaResult {
  TokenSeq out;
  Tensor weights;  // [h, N_q, N_kv]
};

/// Standard multi-head attention (projections included, no residual).
MhaResult mha(const TokenSeq& q, const TokenSeq& k, const TokenSeq& v, const AttentionParams& params);

/// Attention residual then FFN residual, given precomputed q/k/v.
/// `key_mask`, if defined, scales key columns ([N]) before mixing.
Tensor block_from_qkv(const Tensor& x, const Qkv& qkv, const BlockParams& block, const Tensor& key_mask = {},
                      bool renormalize = false, std::vector<Tensor>* weights_out = nullptr);

Tensor vit_block(const Tensor& x, const BlockParams& block, const Tensor& key_mask = {}, bool renormalize = false,
                 std::vector<Tensor>* weights_out = nullptr);
TokenSeq vit_block(const TokenSeq& tokens, const BlockParams& block);

}  // namespace grtrack
