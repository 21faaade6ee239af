#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "grtrack/data.hpp"
#include "grtrack/image.hpp"
#include "grtrack/loss.hpp"
#include "grtrack/memory.hpp"
#include "grtrack/metrics.hpp"
#include "grtrack/model.hpp"
#include "grtrack/optim.hpp"

namespace grtrack {

struct TrackerSettings {
  double search_factor = 4.0;
  double template_factor = 2.0;
  std::size_t capacity = 0;  // total memory tokens; 0 = 3 * N_z
  UpdateSchedule schedule;
  MemoryPolicy policy = MemoryPolicy::kGr;
  InferOptions infer;
  // Inference stabilisers, both off by default.
  bool hann_window = false;      // multiply the score map by a Hann window before the argmax
  double size_update_rate = 1.0; // new size = (1-r) * old + r * predicted
};

struct TrackerState {
  GRMemory memory;
  PixelBox last_box;
  std::size_t t = 0;
  std::size_t last_update = 0;
  std::size_t frames_since_update = 0;
  std::vector<std::size_t> update_frames;
  double last_score = 0.0;
};

/// One sequence, one tracker. The model is only read.
class Tracker {
 public:
  Tracker(const TrackerModel& model, TrackerSettings settings);

  /// Crops and embeds the anchor template; resets the state to t = 0.
  void init(const Image& frame, const PixelBox& gt);
  /// Predicts the box for the next frame and updates the memory when due.
  PixelBox step(const Image& frame);

  const TrackerState& state() const { return state_; }
  const TrackerSettings& settings() const { return settings_; }

 private:
  const TrackerModel& model_;
  TrackerSettings settings_;
  TrackerState state_;
  double frame_w_ = 0.0, frame_h_ = 0.0;
};

/// Frame 0 reports the ground truth; every later frame the prediction.
std::vector<FrameResult> track_sequence(const TrackerModel& model, const Sequence& seq, const TrackerSettings& settings);

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  std::size_t templates = 3;          // stage 1: 3, stage 2: 7
  std::size_t template_window = 40;   // frames preceding the search frame
  double tau_start = 1.0;
  double tau_end = 0.1;
  double center_jitter = 0.3;         // uniform, in units of sqrt(w h)
  double scale_jitter = 0.15;         // log-uniform half-width
  double search_factor = 4.0;
  double template_factor = 2.0;
  std::size_t capacity = 0;
  LossWeights weights;
  AdamWConfig optimizer;
  std::uint64_t seed = 1;
};

/// Anchor from frame 0, the other templates uniformly from the window before
/// a random search frame, search crop jittered around the gt box.
TrainSample make_sample(const Sequence& seq, const EncoderConfig& cfg, const TrainSettings& s, Rng& rng);

struct LossValues {
  double focal = 0, giou = 0, l1 = 0, ratio = 0, total = 0;
};

/// Forward, backward and one optimizer step. Throws NumericError naming the
/// offending term if any loss part is non-finite.
LossValues train_step(const TrackerModel& model, AdamW& optimizer, std::span<const TrainSample> batch,
                      const TrainOptions& options, const TrainSettings& settings, const Rng& rng);

/// Loss of a batch without updating anything (fixed noise stream).
LossValues evaluate_loss(const TrackerModel& model, std::span<const TrainSample> batch, const TrainSettings& settings,
                         double tau, std::uint64_t noise_seed);

double tau_at(const TrainSettings& s, std::size_t step);

using StepCallback = std::function<void(std::size_t step, const LossValues&)>;

/// Runs settings.steps optimizer steps over samples drawn from `sequences`,
/// continuing from optimizer.steps().
void train(const TrackerModel& model, AdamW& optimizer, std::span<const Sequence> sequences,
           const TrainSettings& settings, const StepCallback& on_step = {});

}  // namespace grtrack
