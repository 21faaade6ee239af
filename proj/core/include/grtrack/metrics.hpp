#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "grtrack/box.hpp"
#include "grtrack/encoder.hpp"

namespace grtrack {

struct FrameResult {
  std::size_t frame_id = 0;
  PixelBox pred;
  PixelBox gt;
};

/// IoU thresholds 0, 0.05, ..., 1.0.
std::vector<double> success_thresholds();

/// Mean over thresholds of the fraction of frames with IoU >= threshold.
/// Throws std::invalid_argument on empty input.
double success_auc(std::span<const double> ious);
double success_auc(std::span<const FrameResult> results);

/// Fraction of frames whose centre error is at most `px` pixels.
double precision(std::span<const FrameResult> results, double px);
double mean_iou(std::span<const FrameResult> results);

/// CSV with header frame,pred_x,pred_y,pred_w,pred_h,gt_x,gt_y,gt_w,gt_h.
void write_results(const std::filesystem::path& file, std::span<const FrameResult> results);
std::vector<FrameResult> read_results(const std::filesystem::path& file);

struct MacBreakdownRow {
  std::string part;          // patch_embed, layerN, head
  std::size_t reference_tokens = 0;  // entering the layer
  std::size_t live_tokens = 0;       // joint attention size after selection
  unsigned long long attention = 0;  // qkv, scores, mixing, output projection
  unsigned long long ffn = 0;
  unsigned long long ranking = 0;    // search-query scores for ranking + MLP
  unsigned long long other = 0;      // patch projection, head convolutions
  unsigned long long total() const { return attention + ffn + ranking + other; }
};

struct MacReport {
  unsigned long long total = 0;
  std::vector<MacBreakdownRow> rows;
};

/// Multiply-accumulates of one inference pass (search patch embedding,
/// encoder, head) with `reference_tokens` memory tokens and the first
/// `stages` relevance stages pruning to their absolute keep counts.
MacReport count_macs(const EncoderConfig& cfg, std::size_t reference_tokens, std::size_t stages);

}  // namespace grtrack
