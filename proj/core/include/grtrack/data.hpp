#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "grtrack/box.hpp"
#include "grtrack/image.hpp"

namespace grtrack {

struct SyntheticSequenceConfig {
  std::size_t length = 100;
  std::size_t frame_width = 128;
  std::size_t frame_height = 128;
  double target_min_side = 16.0;  // px
  double target_max_side = 26.0;
  double speed = 1.5;             // px / frame
  double jitter = 0.5;            // px, std of per-frame position noise
  double drift = 0.0;             // appearance change per frame (colour and pattern)
  double scale_drift = 0.0;       // relative size change per frame
  std::size_t distractors = 0;
  double distractor_similarity = 0.5;  // 0 unrelated colours, 1 same colours as the target
  std::vector<std::pair<std::size_t, std::size_t>> occlusions;  // (start, duration)

  /// Throws ConfigError when rates are non-finite or the target cannot fit.
  void validate() const;
};

struct Sequence {
  std::vector<Image> frames;
  std::vector<PixelBox> boxes;  // integer pixels, top-left convention

  std::size_t size() const { return frames.size(); }
};

/// Deterministic in (cfg, seed).
Sequence gen_sequence(const SyntheticSequenceConfig& cfg, std::uint64_t seed);

/// Writes frames/NNNNN.ppm and groundtruth.txt under dir.
void write_sequence(const std::filesystem::path& dir, const Sequence& seq);
/// Throws DataError on missing or inconsistent files.
Sequence read_sequence(const std::filesystem::path& dir);

std::vector<PixelBox> read_groundtruth(const std::filesystem::path& file);
void write_groundtruth(const std::filesystem::path& file, const std::vector<PixelBox>& boxes);

/// Sequence directories directly under `root` (sorted), or `root` itself if
/// it holds a groundtruth.txt.
std::vector<std::filesystem::path> list_sequences(const std::filesystem::path& root);

}  // namespace grtrack
