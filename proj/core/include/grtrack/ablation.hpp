#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "grtrack/tracker.hpp"

namespace grtrack {

struct AblationRow {
  MemoryPolicy policy;
  double auc = 0.0;
  double precision20 = 0.0;
  double mean_iou = 0.0;
  std::vector<double> sequence_auc;  // one per input sequence, input order
};

/// Tracks every sequence under each policy. Sequences run on `threads`
/// workers (0 = hardware concurrency); results do not depend on the count.
std::vector<AblationRow> run_ablation(const TrackerModel& model, std::span<const Sequence> sequences,
                                      std::span<const MemoryPolicy> policies, const TrackerSettings& base,
                                      std::size_t threads = 0);

void write_ablation(const std::filesystem::path& file, std::span<const AblationRow> rows);

/// Runs fn(i) for i in [0, n) on a small pool. The first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace grtrack
