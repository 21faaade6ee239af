#include "grtrack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "grtrack/errors.hpp"
#include "grtrack/relevance.hpp"

namespace grtrack {

std::vector<double> success_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 20; ++i) t.push_back(0.05 * i);
  return t;
}

double success_auc(std::span<const double> ious) {
  if (ious.empty()) throw std::invalid_argument("success_auc: empty results");
  const auto th = success_thresholds();
  double acc = 0.0;
  for (double t : th) {
    std::size_t hit = 0;
    // small slack so 0.4 >= 0.05*8 holds despite representation error
    for (double v : ious) hit += v >= t - 1e-12 ? 1 : 0;
    acc += static_cast<double>(hit) / static_cast<double>(ious.size());
  }
  return acc / static_cast<double>(th.size());
}

double success_auc(std::span<const FrameResult> results) {
  std::vector<double> ious;
  for (const auto& r : results) ious.push_back(iou(r.pred, r.gt));
  return success_auc(ious);
}

double precision(std::span<const FrameResult> results, double px) {
  if (results.empty()) throw std::invalid_argument("precision: empty results");
  std::size_t hit = 0;
  for (const auto& r : results) {
    const BBox a = r.pred.center_form(), b = r.gt.center_form();
    hit += std::hypot(a.cx - b.cx, a.cy - b.cy) <= px ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

double mean_iou(std::span<const FrameResult> results) {
  if (results.empty()) throw std::invalid_argument("mean_iou: empty results");
  double s = 0.0;
  for (const auto& r : results) s += iou(r.pred, r.gt);
  return s / static_cast<double>(results.size());
}

void write_results(const std::filesystem::path& file, std::span<const FrameResult> results) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << "frame,pred_x,pred_y,pred_w,pred_h,gt_x,gt_y,gt_w,gt_h\n";
  char line[256];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.frame_id, r.pred.x, r.pred.y,
                  r.pred.w, r.pred.h, r.gt.x, r.gt.y, r.gt.w, r.gt.h);
    out << line;
  }
}

std::vector<FrameResult> read_results(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("frame,", 0) != 0) throw DataError(file.string() + ": missing header");
  std::vector<FrameResult> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    FrameResult r;
    if (!(ss >> r.frame_id >> r.pred.x >> r.pred.y >> r.pred.w >> r.pred.h >> r.gt.x >> r.gt.y >> r.gt.w >> r.gt.h)) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back(r);
  }
  return out;
}

namespace {

using u64 = unsigned long long;

// Attention over n tokens after q/k/v are known: scores, mixing, output projection.
u64 joint_attention(u64 n, u64 c) { return 2 * n * n * c + n * c * c; }
u64 ffn(u64 n, u64 c, u64 ratio) { return 2 * ratio * n * c * c; }

}  // namespace

MacReport count_macs(const EncoderConfig& cfg, std::size_t reference_tokens, std::size_t stages) {
  cfg.validate();
  const u64 c = cfg.dim, nx = cfg.search_tokens(), r = cfg.mlp_ratio;
  const auto counts = stage_keep_counts(reference_tokens, cfg.keep_ratios);
  u64 mlp = 0;
  {
    u64 in = cfg.heads;
    for (auto h : cfg.ranking_hidden) {
      mlp += in * h;
      in = h;
    }
    mlp += in * 2;
  }

  MacReport rep;
  MacBreakdownRow embed{"patch_embed", reference_tokens, nx};
  embed.other = nx * cfg.patch_dim() * c;
  rep.rows.push_back(embed);

  u64 ref = reference_tokens;
  for (std::size_t layer = 1; layer <= cfg.depth; ++layer) {
    MacBreakdownRow row{"layer" + std::to_string(layer), ref};
    std::size_t stage = cfg.relevance_layers.size();
    for (std::size_t s = 0; s < cfg.relevance_layers.size(); ++s)
      if (cfg.relevance_layers[s] == layer) stage = s;
    const u64 n = ref + nx;
    if (stage < stages && stage < cfg.relevance_layers.size() && counts[stage] < ref) {
      const u64 k = counts[stage];
      const u64 live = k + nx;
      row.ranking = nx * n * c + ref * mlp;
      row.attention = 3 * n * c * c + joint_attention(live, c);
      row.ffn = ffn(live, c, r);
      row.live_tokens = live;
      ref = k;
    } else {
      row.attention = 3 * n * c * c + joint_attention(n, c);
      row.ffn = ffn(n, c, r);
      row.live_tokens = n;
    }
    rep.rows.push_back(row);
  }

  const u64 g2 = static_cast<u64>(cfg.search_grid()) * cfg.search_grid();
  const u64 c1 = cfg.head_channels.at(0), c2 = cfg.head_channels.at(1);
  MacBreakdownRow head{"head", 0, nx};
  // three conv3x3 branches: C->c1->c2->{1,2,2}
  head.other = 9 * g2 * (3 * (c * c1 + c1 * c2) + c2 * (1 + 2 + 2));
  rep.rows.push_back(head);

  for (const auto& row : rep.rows) rep.total += row.total();
  return rep;
}

}  // namespace grtrack
