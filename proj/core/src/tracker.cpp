#include "grtrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "grtrack/errors.hpp"
#include "grtrack/ops.hpp"

namespace grtrack {

Tracker::Tracker(const TrackerModel& model, TrackerSettings settings) : model_(model), settings_(settings) {}

void Tracker::init(const Image& frame, const PixelBox& gt) {
  if (!(gt.w > 0.0 && gt.h > 0.0)) throw std::invalid_argument("tracker init: degenerate box");
  frame_w_ = static_cast<double>(frame.width);
  frame_h_ = static_cast<double>(frame.height);
  const auto crop = crop_region(frame, gt, settings_.template_factor, model_.cfg.template_size);
  TokenSeq anchor;
  {
    NoGradGuard guard;
    anchor = model_.embed_template(crop.chw, 0, TokenKind::kAnchor);
  }
  state_ = TrackerState{};
  state_.memory = init_memory(anchor, model_.cfg.template_tokens(), settings_.capacity);
  state_.last_box = gt;
}

namespace {

// argmax of score * hann, box read at that cell
BBox windowed_box(const ScoreMaps& maps) {
  const auto& sc = maps.score;
  const std::size_t g = sc.shape().back();
  std::vector<double> hann(g);
  for (std::size_t i = 0; i < g; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 0.5) / g);
  Cell best;
  double best_v = -1.0;
  for (std::size_t y = 0; y < g; ++y)
    for (std::size_t x = 0; x < g; ++x) {
      const double v = sc.data()[y * g + x] * hann[y] * hann[x];
      if (v > best_v) best_v = v, best = Cell{x, y};
    }
  const Tensor b = box_at_cell(maps, best);
  return BBox{b.data()[0], b.data()[1], b.data()[2], b.data()[3]};
}

}  // namespace

PixelBox Tracker::step(const Image& frame) {
  NoGradGuard guard;
  const auto& cfg = model_.cfg;
  state_.t += 1;
  const int frame_id = static_cast<int>(state_.t);

  const auto search_crop = crop_region(frame, state_.last_box, settings_.search_factor, cfg.search_size);
  const TokenSeq search = model_.embed_search(search_crop.chw, frame_id);
  const auto result = forward_infer(model_, state_.memory.tokens(), search, settings_.infer);
  const BBox box = settings_.hann_window ? windowed_box(result.maps) : assemble_box(result.maps);
  state_.last_score = *std::max_element(result.maps.score.data().begin(), result.maps.score.data().end());

  BBox fb = search_crop.transform.to_frame(box).center_form();
  const double r = settings_.size_update_rate;
  if (r < 1.0) {
    fb.w = (1.0 - r) * state_.last_box.w + r * fb.w;
    fb.h = (1.0 - r) * state_.last_box.h + r * fb.h;
  }
  PixelBox pred = clamp_to_frame(PixelBox::from_center(fb), frame_w_, frame_h_);
  state_.last_box = pred;
  state_.frames_since_update += 1;

  if (settings_.schedule.due(state_.t, state_.last_update)) {
    if (settings_.policy != MemoryPolicy::kOneTemplate) {
      const auto tpl_crop = crop_region(frame, pred, settings_.template_factor, cfg.template_size);
      const TokenSeq tpl = model_.embed_template(tpl_crop.chw, frame_id, TokenKind::kTemplate);
      state_.memory = update_memory(state_.memory, tpl, search, state_.last_score, settings_.policy, &model_.filter);
    }
    state_.last_update = state_.t;
    state_.frames_since_update = 0;
    state_.update_frames.push_back(state_.t);
  }
  return pred;
}

std::vector<FrameResult> track_sequence(const TrackerModel& model, const Sequence& seq,
                                        const TrackerSettings& settings) {
  if (seq.size() == 0) throw DataError("track_sequence: empty sequence");
  Tracker tracker(model, settings);
  tracker.init(seq.frames[0], seq.boxes[0]);
  std::vector<FrameResult> out;
  out.push_back({0, seq.boxes[0], seq.boxes[0]});
  for (std::size_t i = 1; i < seq.size(); ++i) out.push_back({i, tracker.step(seq.frames[i]), seq.boxes[i]});
  return out;
}

// ---------------------------------------------------------------------------

TrainSample make_sample(const Sequence& seq, const EncoderConfig& cfg, const TrainSettings& s, Rng& rng) {
  if (seq.size() < 2) throw DataError("make_sample: sequence needs at least two frames");
  if (s.templates == 0) throw ConfigError("make_sample: need at least one template");
  TrainSample sample;
  const std::size_t t = 1 + rng.below(seq.size() - 1);
  const std::size_t lo = t > s.template_window ? t - s.template_window : 0;

  sample.templates.push_back(crop_region(seq.frames[0], seq.boxes[0], s.template_factor, cfg.template_size).chw);
  for (std::size_t i = 1; i < s.templates; ++i) {
    const std::size_t f = lo + rng.below(t - lo);
    sample.templates.push_back(crop_region(seq.frames[f], seq.boxes[f], s.template_factor, cfg.template_size).chw);
  }

  const PixelBox& gt = seq.boxes[t];
  const BBox c = gt.center_form();
  const double unit = std::sqrt(gt.w * gt.h);
  const double cx = c.cx + rng.uniform(-s.center_jitter, s.center_jitter) * unit;
  const double cy = c.cy + rng.uniform(-s.center_jitter, s.center_jitter) * unit;
  const double side = crop_side(gt, s.search_factor) * std::exp(rng.uniform(-s.scale_jitter, s.scale_jitter));
  auto crop = crop_at(seq.frames[t], cx, cy, side, cfg.search_size);
  sample.search = std::move(crop.chw);
  sample.gt = crop.transform.to_crop(gt);
  sample.gt.w = std::clamp(sample.gt.w, 1e-3, 1.0);
  sample.gt.h = std::clamp(sample.gt.h, 1e-3, 1.0);
  return sample;
}

double tau_at(const TrainSettings& s, std::size_t step) {
  if (s.steps <= 1) return s.tau_end;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(s.steps - 1));
  return s.tau_start + (s.tau_end - s.tau_start) * f;
}

namespace {

LossValues values_of(const LossParts& p, const Tensor& total) {
  return LossValues{p.focal.item(), p.giou.item(), p.l1.item(), p.ratio.item(), total.item()};
}

}  // namespace

LossValues train_step(const TrackerModel& model, AdamW& optimizer, std::span<const TrainSample> batch,
                      const TrainOptions& options, const TrainSettings& settings, const Rng& rng) {
  const double q_filter = filter_keep_ratio(model.cfg, settings.capacity);
  auto parts = compute_loss(model, batch, options, rng, q_filter);
  auto total = total_loss(parts, settings.weights);
  const LossValues v = values_of(parts, total);
  total.backward();
  optimizer.step();
  return v;
}

LossValues evaluate_loss(const TrackerModel& model, std::span<const TrainSample> batch, const TrainSettings& settings,
                         double tau, std::uint64_t noise_seed) {
  NoGradGuard guard;
  TrainOptions opt;
  opt.tau = tau;
  auto parts = compute_loss(model, batch, opt, Rng(noise_seed, 77), filter_keep_ratio(model.cfg, settings.capacity));
  return values_of(parts, total_loss(parts, settings.weights));
}

void train(const TrackerModel& model, AdamW& optimizer, std::span<const Sequence> sequences,
           const TrainSettings& settings, const StepCallback& on_step) {
  if (sequences.empty()) throw DataError("train: no sequences");
  const std::size_t first = optimizer.steps();
  for (std::size_t k = 0; k < settings.steps; ++k) {
    const std::size_t step = first + k;
    // per-step streams keep resumed runs identical to uninterrupted ones
    Rng data_rng(settings.seed, 1000 + step);
    std::vector<TrainSample> batch;
    for (std::size_t b = 0; b < settings.batch_size; ++b) {
      const auto& seq = sequences[data_rng.below(sequences.size())];
      batch.push_back(make_sample(seq, model.cfg, settings, data_rng));
    }
    TrainOptions opt;
    opt.tau = tau_at(settings, k);
    const LossValues v = train_step(model, optimizer, batch, opt, settings, Rng(settings.seed, 500000 + step));
    if (on_step) on_step(step, v);
  }
}

}  // namespace grtrack
