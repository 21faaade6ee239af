#include "grtrack/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "grtrack/ops.hpp"

namespace grtrack {

std::vector<double> RelevanceScores::keep_scores() const {
  std::vector<double> out(size());
  for (std::size_t y = 0; y < out.size(); ++y) out[y] = keep(y);
  return out;
}

Tensor RankingMlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ops::gelu(h);
  }
  return h;
}

RankingMlp RankingMlp::init(std::size_t heads, std::span<const std::size_t> hidden, Rng& rng) {
  RankingMlp mlp;
  std::size_t in = heads;
  for (auto width : hidden) {
    mlp.layers.push_back(Linear::init(in, width, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    in = width;
  }
  mlp.layers.push_back(Linear::init(in, 2, rng, 0.02));
  // Start out favouring "keep" (pi_0 ~ 0.8).
  mlp.layers.back().bias.mutable_data()[0] = 1.5;
  return mlp;
}

void RankingMlp::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".fc" + std::to_string(i + 1), out);
}

AttentionWeights reference_attention(std::span<const Tensor> per_head, std::size_t reference_count,
                                     std::size_t search_row_offset) {
  std::vector<Tensor> heads;
  heads.reserve(per_head.size());
  for (const auto& w : per_head) {
    if (search_row_offset > w.dim(0) || reference_count > w.dim(1)) {
      throw DimensionError("reference_attention: ranges exceed weights " + shape_str(w.shape()));
    }
    auto rows = ops::slice_rows(w, search_row_offset, w.dim(0) - search_row_offset);
    heads.push_back(ops::transpose(ops::slice_cols(rows, 0, reference_count)));
  }
  return AttentionWeights{ops::stack(heads)};
}

Tensor pool_weights(const AttentionWeights& w) {
  if (w.w.rank() != 3 || w.search_count() == 0) throw DimensionError("pool_weights: expected [h, N_ref, N_x>=1]");
  return ops::mean_lastdim(w.w);
}

RelevanceScores predict_scores(const Tensor& pooled, const RankingMlp& mlp) {
  if (pooled.rank() != 2 || pooled.dim(0) != mlp.input_dim()) {
    throw DimensionError("predict_scores: pooled weights " + shape_str(pooled.shape()) + " but MLP expects " +
                         std::to_string(mlp.input_dim()) + " heads");
  }
  return RelevanceScores{ops::softmax(mlp(ops::transpose(pooled)), 1)};
}

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_keep: temperature must be positive");
}

Tensor gumbel_noise(std::size_t n, const Rng& rng, std::uint64_t noise_offset) {
  std::vector<double> g(2 * n);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.gumbel_at(noise_offset + i);
  return Tensor({n, 2}, std::move(g));
}

}  // namespace

Tensor gumbel_soft_samples(const RelevanceScores& scores, double tau, const Rng& rng, std::uint64_t noise_offset) {
  check_tau(tau);
  const std::size_t n = scores.size();
  auto logits = ops::add(ops::log(scores.pi), gumbel_noise(n, rng, noise_offset));
  return ops::softmax(ops::scale(logits, 1.0 / tau), 1);
}

KeepDecision gumbel_keep(const RelevanceScores& scores, double tau, const Rng& rng, std::uint64_t noise_offset,
                         bool hard) {
  auto soft = gumbel_soft_samples(scores, tau, rng, noise_offset);
  const std::size_t n = scores.size();
  auto keep_soft = ops::slice_cols(soft, 0, 1);
  keep_soft = ops::reshape(keep_soft, {n});
  KeepDecision d;
  d.mode = RelevanceMode::kTrain;
  if (hard) {
    std::vector<double> one_hot(n);
    for (std::size_t y = 0; y < n; ++y) one_hot[y] = soft[2 * y] >= soft[2 * y + 1] ? 1.0 : 0.0;
    d.mask = ops::straight_through(std::move(one_hot), keep_soft);
  } else {
    d.mask = keep_soft;
  }
  return d;
}

AttentionWeights mask_weights(const AttentionWeights& w, const Tensor& keep) {
  const std::size_t h = w.heads(), n_ref = w.reference_count(), n_x = w.search_count();
  if (keep.numel() != n_ref) {
    throw DimensionError("mask_weights: mask of length " + std::to_string(keep.numel()) + " for " +
                         std::to_string(n_ref) + " reference tokens");
  }
  // [h, N_ref, N_x] viewed as [h*N_ref, N_x]: scale row (head, y) by D_y.
  std::vector<Tensor> tiled(h, ops::reshape(keep, {n_ref}));
  auto row_scale = ops::pack(tiled);
  auto flat = ops::reshape(w.w, {h * n_ref, n_x});
  return AttentionWeights{ops::reshape(ops::mul_rows(flat, row_scale), {h, n_ref, n_x})};
}

std::vector<std::size_t> topk_select(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw std::out_of_range("topk_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) +
                            "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t stage_keep_count(std::size_t reference_count, double ratio) {
  const double exact = static_cast<double>(reference_count) * ratio;
  const auto k = static_cast<std::size_t>(std::floor(exact + 1e-9));
  return std::clamp<std::size_t>(k, reference_count > 0 ? 1 : 0, reference_count);
}

std::vector<std::size_t> stage_keep_counts(std::size_t reference_count, std::span<const double> ratios) {
  std::vector<std::size_t> out;
  out.reserve(ratios.size());
  for (double r : ratios) out.push_back(stage_keep_count(reference_count, r));
  return out;
}

RelevanceResult relevance_block(const TokenSeq& ref, const TokenSeq& search, const BlockParams& block,
                                const RankingMlp& mlp, const RelevanceOptions& options, const Rng& rng,
                                const Tensor& prior_mask, const Tensor& extra_mask) {
  if (ref.dim() != search.dim()) throw DimensionError("relevance_block: reference and search dims differ");
  const std::size_t n_ref = ref.size(), n_x = search.size();
  std::vector<Tensor> rows{ref.embeddings, search.embeddings};
  const Tensor x = ops::concat_rows(rows);
  const Qkv qkv = project_qkv(x, block);

  RelevanceResult result;
  if (options.mode == RelevanceMode::kInfer) {
    if (options.keep < 1 || options.keep > n_ref) {
      throw std::out_of_range("relevance_block: k=" + std::to_string(options.keep) + " exceeds " +
                              std::to_string(n_ref) + " reference tokens");
    }
    // Search queries against every key; only the reference columns are ranked.
    auto ranking = attention_weights(ops::slice_rows(qkv.q, n_ref, n_x), qkv.k, block.attn.heads);
    result.scores = predict_scores(pool_weights(reference_attention(ranking, n_ref, 0)), mlp);
    result.decision.mode = RelevanceMode::kInfer;
    result.decision.kept_indices = topk_select(result.scores.keep_scores(), options.keep);

    std::vector<std::size_t> keep_rows = result.decision.kept_indices;
    for (std::size_t j = 0; j < n_x; ++j) keep_rows.push_back(n_ref + j);
    auto out = block_from_qkv(ops::gather_rows(x, keep_rows), gather_qkv(qkv, keep_rows), block);
    const std::size_t k = options.keep;
    result.out_ref.embeddings = ops::slice_rows(out, 0, k);
    for (auto i : result.decision.kept_indices) result.out_ref.provenance.push_back(ref.provenance[i]);
    result.out_search = TokenSeq{ops::slice_rows(out, k, n_x), search.provenance};
    return result;
  }

  auto weights = attention_weights(qkv.q, qkv.k, block.attn.heads);
  result.scores = predict_scores(pool_weights(reference_attention(weights, n_ref, n_ref)), mlp);
  result.decision = gumbel_keep(result.scores, options.tau, rng, options.noise_offset, options.hard);
  if (prior_mask.defined()) result.decision.mask = ops::mul(prior_mask, result.decision.mask);

  Tensor ref_mask = result.decision.mask;
  if (extra_mask.defined()) ref_mask = ops::mul(ref_mask, extra_mask);
  std::vector<Tensor> mask_parts{ref_mask, Tensor::full({n_x}, 1.0)};
  weights = mask_key_columns(weights, ops::pack(mask_parts), options.renormalize);

  auto o = ops::add(x, attention_mix(weights, qkv.v, block.attn));
  auto out = ops::add(o, block.fc2(ops::gelu(block.fc1(block.norm2(o)))));
  result.out_ref = TokenSeq{ops::slice_rows(out, 0, n_ref), ref.provenance};
  result.out_search = TokenSeq{ops::slice_rows(out, n_ref, n_x), search.provenance};
  return result;
}

}  // namespace grtrack
