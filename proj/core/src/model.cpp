#include "grtrack/model.hpp"

#include <algorithm>
#include <string>
#include <tuple>

#include "grtrack/errors.hpp"
#include "grtrack/ops.hpp"

namespace grtrack {

TrackerModel TrackerModel::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 1);
  TrackerModel m;
  m.cfg = cfg;
  m.embed = PatchEmbedParams::init(cfg, rng);
  for (std::size_t i = 0; i < cfg.depth; ++i) m.blocks.push_back(BlockParams::init(cfg.dim, cfg.heads, cfg.mlp_ratio, rng));
  for (std::size_t s = 0; s < cfg.relevance_layers.size(); ++s) {
    m.ranking.push_back(RankingMlp::init(cfg.heads, cfg.ranking_hidden, rng));
  }
  m.filter = TokenFilterParams::init(cfg, rng);
  m.head = HeadParams::init(cfg, rng);
  return m;
}

ParamList TrackerModel::parameters() const {
  ParamList out;
  embed.collect("embed", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("blocks." + std::to_string(i), out);
  for (std::size_t s = 0; s < ranking.size(); ++s) ranking[s].collect("rank" + std::to_string(s), out);
  filter.collect("filter", out);
  head.collect("head", out);
  return out;
}

bool is_fast_param(const std::string& name) {
  return name.rfind("rank", 0) == 0 || name.rfind("filter.rank", 0) == 0 || name.rfind("head", 0) == 0;
}

TokenSeq TrackerModel::embed_template(std::span<const double> chw, int frame_id, TokenKind kind) const {
  return grtrack::embed(patchify(chw, cfg.template_size, cfg.template_size, cfg.patch_size), embed,
                        ImageRole::kTemplate, frame_id, kind);
}

TokenSeq TrackerModel::embed_search(std::span<const double> chw, int frame_id) const {
  return grtrack::embed(patchify(chw, cfg.search_size, cfg.search_size, cfg.patch_size), embed, ImageRole::kSearch,
                        frame_id, TokenKind::kSearch);
}

namespace {

// Index of `layer` (1-based) in the relevance list, or npos.
std::size_t stage_of(const EncoderConfig& cfg, std::size_t layer) {
  auto it = std::find(cfg.relevance_layers.begin(), cfg.relevance_layers.end(), layer);
  return it == cfg.relevance_layers.end() ? std::string::npos
                                          : static_cast<std::size_t>(it - cfg.relevance_layers.begin());
}

std::pair<TokenSeq, TokenSeq> split(const Tensor& out, const TokenSeq& ref, const TokenSeq& search) {
  const std::size_t n_ref = ref.size();
  TokenSeq r{n_ref ? ops::slice_rows(out, 0, n_ref) : Tensor{}, ref.provenance};
  TokenSeq s{ops::slice_rows(out, n_ref, search.size()), search.provenance};
  return {r, s};
}

Tensor joined(const TokenSeq& ref, const TokenSeq& search) {
  if (ref.empty()) return search.embeddings;
  std::vector<Tensor> rows{ref.embeddings, search.embeddings};
  return ops::concat_rows(rows);
}

}  // namespace

InferResult forward_infer(const TrackerModel& model, const TokenSeq& reference, const TokenSeq& search,
                          const InferOptions& options) {
  NoGradGuard guard;
  const auto& cfg = model.cfg;
  const auto counts = stage_keep_counts(reference.size(), cfg.keep_ratios);
  TokenSeq ref = reference, srch = search;
  InferResult result;
  for (std::size_t layer = 1; layer <= cfg.depth; ++layer) {
    result.reference_counts.push_back(ref.size());
    const auto& block = model.blocks[layer - 1];
    const std::size_t s = stage_of(cfg, layer);
    if (options.prune && s != std::string::npos && s < options.stages && counts[s] < ref.size()) {
      RelevanceOptions ro;
      ro.keep = counts[s];
      auto r = relevance_block(ref, srch, block, model.ranking[s], ro, Rng(0));
      ref = std::move(r.out_ref);
      srch = std::move(r.out_search);
    } else {
      std::tie(ref, srch) = split(vit_block(joined(ref, srch), block), ref, srch);
    }
  }
  result.maps = head_forward(srch, model.head);
  return result;
}

TrainForward forward_train(const TrackerModel& model, const TokenSeq& reference, std::size_t anchor_tokens,
                           const TokenSeq& search, const TrainOptions& options, const Rng& rng) {
  const auto& cfg = model.cfg;
  const std::size_t n_ref = reference.size(), n_x = search.size();
  if (anchor_tokens > n_ref) throw DimensionError("forward_train: anchor count exceeds reference tokens");
  TrainForward out;
  Tensor filter_mask;
  if (options.use_filter && n_ref > anchor_tokens) {
    auto scores = token_filter_scores(reference, search, model.filter);
    RelevanceScores candidates{ops::slice_rows(scores.pi, anchor_tokens, n_ref - anchor_tokens)};
    auto d = gumbel_keep(candidates, options.tau, rng, options.noise_offset, options.hard);
    out.filter_keep = d.mask;
    std::vector<Tensor> parts{Tensor::full({anchor_tokens}, 1.0), d.mask};
    filter_mask = anchor_tokens ? ops::pack(parts) : d.mask;
  }

  TokenSeq ref = reference, srch = search;
  Tensor prior;
  for (std::size_t layer = 1; layer <= cfg.depth; ++layer) {
    const auto& block = model.blocks[layer - 1];
    const std::size_t s = stage_of(cfg, layer);
    if (s != std::string::npos && n_ref > 0) {
      RelevanceOptions ro;
      ro.mode = RelevanceMode::kTrain;
      ro.tau = options.tau;
      ro.hard = options.hard;
      ro.renormalize = options.renormalize;
      ro.noise_offset = options.noise_offset + 2 * n_ref * (s + 1);
      auto r = relevance_block(ref, srch, block, model.ranking[s], ro, rng, prior, filter_mask);
      prior = r.decision.mask;
      out.stage_masks.push_back(prior);
      ref = std::move(r.out_ref);
      srch = std::move(r.out_search);
      continue;
    }
    Tensor key_mask;
    if (prior.defined() || filter_mask.defined()) {
      Tensor m = prior.defined() && filter_mask.defined() ? ops::mul(prior, filter_mask)
                 : prior.defined()                        ? prior
                                                          : filter_mask;
      std::vector<Tensor> parts{m, Tensor::full({n_x}, 1.0)};
      key_mask = ops::pack(parts);
    }
    std::tie(ref, srch) = split(vit_block(joined(ref, srch), block, key_mask, options.renormalize), ref, srch);
  }
  out.maps = head_forward(srch, model.head);
  return out;
}

double filter_keep_ratio(const EncoderConfig& cfg, std::size_t capacity_tokens) {
  const double nmax = static_cast<double>(capacity_tokens ? capacity_tokens : 3 * cfg.template_tokens());
  return (nmax - static_cast<double>(cfg.template_tokens())) / nmax;
}

LossParts compute_loss(const TrackerModel& model, std::span<const TrainSample> batch, const TrainOptions& options,
                       const Rng& rng, double filter_ratio) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  const auto& cfg = model.cfg;
  const std::size_t g = cfg.search_grid();
  std::vector<Tensor> focal, giou, l1;
  std::vector<std::vector<Tensor>> decisions;
  std::vector<double> ratios;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& sample = batch[b];
    if (sample.templates.empty()) throw std::invalid_argument("compute_loss: sample without templates");
    TokenSeq ref;
    for (std::size_t t = 0; t < sample.templates.size(); ++t) {
      ref = concat_tokens(ref, model.embed_template(sample.templates[t], static_cast<int>(t),
                                                    t == 0 ? TokenKind::kAnchor : TokenKind::kTemplate));
    }
    auto search = model.embed_search(sample.search, 0);
    TrainOptions opt = options;
    opt.noise_offset = options.noise_offset + b * 2 * ref.size() * (cfg.relevance_layers.size() + 2);
    auto fwd = forward_train(model, ref, cfg.template_tokens(), search, opt, rng);

    focal.push_back(focal_loss(fwd.maps.score, gaussian_target(sample.gt, g)));
    auto pred = box_at_cell(fwd.maps, center_cell(sample.gt, g));
    Tensor gt({4}, {sample.gt.cx, sample.gt.cy, sample.gt.w, sample.gt.h});
    giou.push_back(giou_loss(pred, gt));
    l1.push_back(l1_loss(pred, gt));

    std::vector<Tensor> d = fwd.stage_masks;
    std::vector<double> q(cfg.keep_ratios.begin(), cfg.keep_ratios.begin() + static_cast<std::ptrdiff_t>(d.size()));
    if (fwd.filter_keep.defined()) {
      d.push_back(fwd.filter_keep);
      q.push_back(filter_ratio);
    }
    if (b == 0) ratios = q;
    if (q != ratios) throw DimensionError("compute_loss: samples disagree on the number of ratio stages");
    decisions.push_back(std::move(d));
  }
  LossParts parts;
  parts.focal = ops::mean(ops::pack(focal));
  parts.giou = ops::mean(ops::pack(giou));
  parts.l1 = ops::mean(ops::pack(l1));
  parts.ratio = ratios.empty() ? Tensor::scalar(0.0) : ratio_loss(decisions, ratios);
  return parts;
}

}  // namespace grtrack
