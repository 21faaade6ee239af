#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "grtrack/box.hpp"
#include "grtrack/encoder.hpp"
#include "grtrack/head.hpp"
#include "grtrack/loss.hpp"
#include "grtrack/memory.hpp"
#include "grtrack/relevance.hpp"

namespace grtrack {

struct TrackerModel {
  EncoderConfig cfg;
  PatchEmbedParams embed;
  std::vector<BlockParams> blocks;   // depth
  std::vector<RankingMlp> ranking;   // one per relevance layer
  TokenFilterParams filter;
  HeadParams head;

  static TrackerModel init(const EncoderConfig& cfg, std::uint64_t seed);

  /// Every trainable tensor with a stable dotted name.
  ParamList parameters() const;

  TokenSeq embed_template(std::span<const double> chw, int frame_id, TokenKind kind) const;
  TokenSeq embed_search(std::span<const double> chw, int frame_id) const;
};

/// True for the ranking MLPs (encoder and token filter) and the head.
bool is_fast_param(const std::string& name);

struct InferOptions {
  bool prune = true;
  /// Number of relevance stages that prune (the rest run as vanilla blocks).
  std::size_t stages = std::numeric_limits<std::size_t>::max();
};

struct InferResult {
  ScoreMaps maps;
  /// Reference tokens entering each encoder layer.
  std::vector<std::size_t> reference_counts;
};

/// Inference encoder + head. Stage counts are absolute and derived from the
/// reference count entering the encoder; a stage whose k is not below the
/// live count runs as a plain block.
InferResult forward_infer(const TrackerModel& model, const TokenSeq& reference, const TokenSeq& search,
                          const InferOptions& options = {});

struct TrainOptions {
  double tau = 1.0;
  bool hard = true;
  bool use_filter = true;
  bool renormalize = false;
  std::uint64_t noise_offset = 0;
};

struct TrainForward {
  ScoreMaps maps;
  std::vector<Tensor> stage_masks;  // cumulative, one per relevance stage
  Tensor filter_keep;               // D over non-anchor reference tokens, if any
};

/// Training forward: full token set, Gumbel masks inside the relevance
/// layers, token-filter mask over the non-anchor reference tokens.
TrainForward forward_train(const TrackerModel& model, const TokenSeq& reference, std::size_t anchor_tokens,
                           const TokenSeq& search, const TrainOptions& options, const Rng& rng);

/// One training example at crop resolution.
struct TrainSample {
  std::vector<std::vector<double>> templates;  // CHW, first is the anchor
  std::vector<double> search;                  // CHW
  BBox gt;                                     // normalised to the search crop
};

/// Keep-ratio target of the token filter stage: (N_max - N_z) / N_max.
double filter_keep_ratio(const EncoderConfig& cfg, std::size_t capacity_tokens);

/// Batch loss parts (means over samples; ratio term over every stage).
LossParts compute_loss(const TrackerModel& model, std::span<const TrainSample> batch, const TrainOptions& options,
                       const Rng& rng, double filter_ratio);

}  // namespace grtrack
