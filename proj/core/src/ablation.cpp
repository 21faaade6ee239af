#include "grtrack/ablation.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <thread>

#include "grtrack/errors.hpp"

namespace grtrack {

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<AblationRow> run_ablation(const TrackerModel& model, std::span<const Sequence> sequences,
                                      std::span<const MemoryPolicy> policies, const TrackerSettings& base,
                                      std::size_t threads) {
  if (sequences.empty()) throw DataError("run_ablation: no sequences");
  const std::size_t n_seq = sequences.size();
  std::vector<std::vector<FrameResult>> results(policies.size() * n_seq);
  parallel_for(results.size(), threads, [&](std::size_t job) {
    TrackerSettings s = base;
    s.policy = policies[job / n_seq];
    results[job] = track_sequence(model, sequences[job % n_seq], s);
  });

  std::vector<AblationRow> rows;
  for (std::size_t p = 0; p < policies.size(); ++p) {
    AblationRow row;
    row.policy = policies[p];
    for (std::size_t i = 0; i < n_seq; ++i) {
      const auto& r = results[p * n_seq + i];
      row.sequence_auc.push_back(success_auc(r));
      row.auc += row.sequence_auc.back();
      row.precision20 += precision(r, 20.0);
      row.mean_iou += mean_iou(r);
    }
    row.auc /= static_cast<double>(n_seq);
    row.precision20 /= static_cast<double>(n_seq);
    row.mean_iou /= static_cast<double>(n_seq);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation(const std::filesystem::path& file, std::span<const AblationRow> rows) {
  std::FILE* f = std::fopen(file.string().c_str(), "w");
  if (f == nullptr) throw DataError("cannot write " + file.string());
  std::fprintf(f, "policy,sequences,auc,precision_20px,mean_iou\n");
  for (const auto& r : rows) {
    std::fprintf(f, "%s,%zu,%.6f,%.6f,%.6f\n", std::string(policy_name(r.policy)).c_str(), r.sequence_auc.size(),
                 r.auc, r.precision20, r.mean_iou);
  }
  std::fclose(f);
}

}  // namespace grtrack
