#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "grtrack/encoder.hpp"
#include "grtrack/relevance.hpp"

namespace grtrack {

enum class MemoryPolicy { kOneTemplate, kFifo, kScore, kGr };

const char* policy_name(MemoryPolicy p);
/// Accepts one_template, fifo, score, gr. Throws ConfigError otherwise.
MemoryPolicy parse_policy(const std::string& name);

/// Update interval 5 up to frame 100, doubling every 100 frames through
/// frame 500, then fixed at 160.
struct UpdateSchedule {
  std::size_t base_interval = 5;
  std::size_t period = 100;
  std::size_t last_doubling_frame = 500;
  std::size_t terminal_interval = 160;

  std::size_t interval(std::size_t t) const;
  /// True when at least interval(t) frames have passed since `last_update`.
  bool due(std::size_t t, std::size_t last_update) const;
};

/// Anchor tokens (never modified) plus a dynamic block; len(anchor) +
/// len(dynamic) <= capacity. For the template-level policies the dynamic
/// block is a run of whole templates with one slot record each.
struct GRMemory {
  TokenSeq anchor;
  TokenSeq dynamic;
  std::size_t capacity = 0;
  std::size_t template_tokens = 0;
  std::vector<int> slot_frames;
  std::vector<double> slot_scores;

  std::size_t size() const { return anchor.size() + dynamic.size(); }
  std::size_t dynamic_capacity() const { return capacity - template_tokens; }
  /// anchor ∪ dynamic, in that order.
  TokenSeq tokens() const;
  std::size_t slot_count() const { return slot_frames.size(); }
};

/// capacity == 0 selects the default total of 3 * N_z.
GRMemory init_memory(const TokenSeq& template_tokens, std::size_t expected_tokens, std::size_t capacity = 0);

/// Three dedicated transformer blocks plus a ranking MLP.
struct TokenFilterParams {
  std::vector<BlockParams> blocks;
  RankingMlp mlp;

  static TokenFilterParams init(const EncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Runs the filter blocks over candidates ∪ search and scores every
/// candidate from the last block's search-query attention. Row order of the
/// result follows `candidates`.
RelevanceScores token_filter_scores(const TokenSeq& candidates, const TokenSeq& search,
                                    const TokenFilterParams& params);

/// Keep scores over memory ∪ new_template (memory in anchor-then-dynamic order).
std::vector<double> token_filter(const GRMemory& memory, const TokenSeq& new_template, const TokenSeq& search,
                                 const TokenFilterParams& params);

/// Memory update on a due frame. `new_score` is the center score recorded
/// for the new template (used by the score policy). `filter` is only read by
/// the gr policy.
GRMemory update_memory(const GRMemory& memory, const TokenSeq& new_template, const TokenSeq& search,
                       double new_score, MemoryPolicy policy, const TokenFilterParams* filter);

/// gr selection given precomputed scores over dynamic ∪ new_template.
GRMemory select_gr(const GRMemory& memory, const TokenSeq& new_template, std::span<const double> candidate_scores);

}  // namespace grtrack
