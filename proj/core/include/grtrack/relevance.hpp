#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "grtrack/encoder.hpp"
#include "grtrack/rng.hpp"
#include "grtrack/tensor.hpp"

namespace grtrack {

/// Post-softmax attention of search queries on reference keys, laid out
/// [h, N_ref, N_x]: for every head, column j holds search query j's
/// weights over the reference tokens.
struct AttentionWeights {
  Tensor w;

  std::size_t heads() const { return w.dim(0); }
  std::size_t reference_count() const { return w.dim(1); }
  std::size_t search_count() const { return w.dim(2); }
};

/// pi [N_ref, 2]: column 0 is the keep score, column 1 the drop score.
struct RelevanceScores {
  Tensor pi;

  std::size_t size() const { return pi.dim(0); }
  double keep(std::size_t y) const { return pi[2 * y]; }
  std::vector<double> keep_scores() const;
};

enum class RelevanceMode { kTrain, kInfer };

struct KeepDecision {
  RelevanceMode mode = RelevanceMode::kInfer;
  /// Train: D [N_ref], hard 0/1 forward values (straight-through to the soft
  /// sample) or the soft sample itself when hard sampling is disabled.
  Tensor mask;
  /// Infer: kept reference rows, strictly increasing.
  std::vector<std::size_t> kept_indices;
};

/// Score MLP: h -> hidden... -> 2 with GELU between linear layers.
struct RankingMlp {
  std::vector<Linear> layers;

  Tensor operator()(const Tensor& x) const;
  std::size_t input_dim() const { return layers.front().weight.dim(0); }
  static RankingMlp init(std::size_t heads, std::span<const std::size_t> hidden, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Extracts [h, N_ref, N_x] from per-head weights [N_q, N_kv] whose keys
/// start with the N_ref reference tokens and whose rows from
/// `search_row_offset` on are the search queries.
AttentionWeights reference_attention(std::span<const Tensor> per_head, std::size_t reference_count,
                                     std::size_t search_row_offset);

/// Mean over the search-query axis: [h, N_ref, N_x] -> [h, N_ref].
Tensor pool_weights(const AttentionWeights& w);

/// Softmax(MLP(w'^T)) -> [N_ref, 2].
RelevanceScores predict_scores(const Tensor& pooled, const RankingMlp& mlp);

/// Two-way Gumbel-Softmax over log(pi). Noise for token y, class c is read at
/// counter `noise_offset + 2y + c`, so a fixed (rng, offset) freezes it.
/// With `hard`, the forward value is the one-hot keep indicator and the
/// backward pass flows through the soft sample.
KeepDecision gumbel_keep(const RelevanceScores& scores, double tau, const Rng& rng, std::uint64_t noise_offset,
                         bool hard = true);

/// Soft (relaxed) samples [N_ref, 2], exposed for tests of the relaxation.
Tensor gumbel_soft_samples(const RelevanceScores& scores, double tau, const Rng& rng, std::uint64_t noise_offset);

/// Scales every reference row y of w by D_y; no renormalisation.
AttentionWeights mask_weights(const AttentionWeights& w, const Tensor& keep);

/// Indices of the k largest scores, ties to the lower index, sorted ascending.
std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k);

/// floor(reference_count * ratio), guarded against representation error.
std::size_t stage_keep_count(std::size_t reference_count, double ratio);
/// Absolute per-stage counts, all derived from the initial reference count.
std::vector<std::size_t> stage_keep_counts(std::size_t reference_count, std::span<const double> ratios);

struct RelevanceOptions {
  RelevanceMode mode = RelevanceMode::kInfer;
  std::size_t keep = 0;  // infer: absolute k
  double tau = 1.0;      // train
  bool hard = true;      // train: straight-through hard sampling
  bool renormalize = false;
  std::uint64_t noise_offset = 0;
};

struct RelevanceResult {
  TokenSeq out_ref;
  TokenSeq out_search;
  KeepDecision decision;
  RelevanceScores scores;
};

/// One relevance-attention encoder layer over reference ∪ search tokens.
///
/// Infer: ranks the reference tokens, keeps the top `keep` (original order),
/// and runs the joint block over kept ∪ search. Train: keeps every token and
/// multiplies the reference key columns of every attention head by the
/// Gumbel mask D, combined with `prior_mask` (earlier stages) and
/// `extra_mask` (token filter) when those are defined. The decision's mask
/// is the cumulative stage mask prior_mask * D.
RelevanceResult relevance_block(const TokenSeq& ref, const TokenSeq& search, const BlockParams& block,
                                const RankingMlp& mlp, const RelevanceOptions& options, const Rng& rng,
                                const Tensor& prior_mask = {}, const Tensor& extra_mask = {});

}  // namespace grtrack
