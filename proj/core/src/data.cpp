#include "grtrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include "grtrack/errors.hpp"
#include "grtrack/rng.hpp"

namespace fs = std::filesystem;

namespace grtrack {

void SyntheticSequenceConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("sequence config: " + m); };
  for (double v : {target_min_side, target_max_side, speed, jitter, drift, scale_drift, distractor_similarity}) {
    if (!std::isfinite(v)) fail("rates must be finite");
  }
  if (length == 0) fail("length must be positive");
  if (target_min_side < 4.0 || target_max_side < target_min_side) fail("target side range invalid");
  // the largest the target can grow under scale drift
  const double grown = target_max_side * 1.5;
  if (grown + 2.0 > static_cast<double>(std::min(frame_width, frame_height))) {
    fail("target of side " + std::to_string(grown) + " px cannot stay inside the frame");
  }
  if (speed < 0.0 || jitter < 0.0) fail("speed and jitter must be non-negative");
  if (distractor_similarity < 0.0 || distractor_similarity > 1.0) fail("distractor similarity must be in [0,1]");
}

namespace {

using Color = std::array<double, 3>;

// Rotation about the grey axis: a hue shift that keeps brightness.
Color hue_rotate(const Color& c, double angle) {
  const double k = 1.0 / std::sqrt(3.0);
  const double cs = std::cos(angle), sn = std::sin(angle);
  const double mean = (c[0] + c[1] + c[2]) / 3.0;
  Color d{c[0] - mean, c[1] - mean, c[2] - mean};
  // Rodrigues with axis (k,k,k); d is orthogonal to the axis
  Color cross{k * (d[2] - d[1]), k * (d[0] - d[2]), k * (d[1] - d[0])};
  Color out;
  for (int i = 0; i < 3; ++i) out[i] = std::clamp(mean + d[i] * cs + cross[i] * sn, 0.0, 255.0);
  return out;
}

Color random_color(Rng& rng) {
  Color c;
  for (auto& v : c) v = rng.uniform(30.0, 225.0);
  return c;
}

struct Pattern {
  Color a, b;
  int kind = 0;   // 0 horizontal stripes, 1 vertical stripes, 2 checker
  double period = 4.0;

  Color at(double u, double v) const {  // u, v in object pixels
    long iu = static_cast<long>(std::floor(u / period));
    long iv = static_cast<long>(std::floor(v / period));
    bool first = kind == 0 ? (iv % 2 == 0) : kind == 1 ? (iu % 2 == 0) : ((iu + iv) % 2 == 0);
    return first ? a : b;
  }
};

struct Mover {
  double x, y, w, h, vx, vy;

  void step(Rng& rng, double fw, double fh, double turn) {
    const double ang = rng.normal(0.0, turn);
    const double c = std::cos(ang), s = std::sin(ang);
    const double nvx = vx * c - vy * s, nvy = vx * s + vy * c;
    vx = nvx;
    vy = nvy;
    x += vx;
    y += vy;
    if (x < 1.0) { x = 1.0; vx = std::abs(vx); }
    if (y < 1.0) { y = 1.0; vy = std::abs(vy); }
    if (x + w > fw - 1.0) { x = fw - 1.0 - w; vx = -std::abs(vx); }
    if (y + h > fh - 1.0) { y = fh - 1.0 - h; vy = -std::abs(vy); }
  }
};

void fill_rect(Image& img, long x0, long y0, long w, long h, const Pattern& p) {
  for (long y = std::max(0L, y0); y < std::min<long>(static_cast<long>(img.height), y0 + h); ++y)
    for (long x = std::max(0L, x0); x < std::min<long>(static_cast<long>(img.width), x0 + w); ++x) {
      const Color c = p.at(static_cast<double>(x - x0), static_cast<double>(y - y0));
      for (std::size_t ch = 0; ch < 3; ++ch)
        img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), ch) = static_cast<std::uint8_t>(std::lround(c[ch]));
    }
}

}  // namespace

Sequence gen_sequence(const SyntheticSequenceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed, 0x5e9);
  const double fw = static_cast<double>(cfg.frame_width), fh = static_cast<double>(cfg.frame_height);

  // static background: a few low-frequency waves per channel plus grain
  Image background(cfg.frame_width, cfg.frame_height);
  {
    struct Wave { double fx, fy, phase, amp; };
    std::array<std::vector<Wave>, 3> waves;
    Color base = random_color(rng);
    for (auto& wv : waves)
      for (int i = 0; i < 3; ++i)
        wv.push_back({rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(0.0, 6.283), rng.uniform(10, 30)});
    for (std::size_t y = 0; y < cfg.frame_height; ++y)
      for (std::size_t x = 0; x < cfg.frame_width; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          double v = base[c] * 0.6 + 50.0;
          for (const auto& wv : waves[c]) v += wv.amp * std::sin(wv.fx * x + wv.fy * y + wv.phase);
          v += rng.normal(0.0, 6.0);
          background.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
  }

  Pattern target;
  target.a = random_color(rng);
  target.b = random_color(rng);
  target.kind = static_cast<int>(rng.below(3));
  target.period = rng.uniform(3.0, 6.0);

  auto make_mover = [&](double side_lo, double side_hi, double speed) {
    Mover m;
    m.w = rng.uniform(side_lo, side_hi);
    m.h = std::clamp(m.w * rng.uniform(0.7, 1.4), side_lo, side_hi);
    m.x = rng.uniform(2.0, fw - m.w * 1.5 - 2.0);
    m.y = rng.uniform(2.0, fh - m.h * 1.5 - 2.0);
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    m.vx = speed * std::cos(ang);
    m.vy = speed * std::sin(ang);
    return m;
  };

  Mover tgt = make_mover(cfg.target_min_side, cfg.target_max_side, cfg.speed);
  const double w0 = tgt.w, h0 = tgt.h;

  std::vector<Mover> dis;
  std::vector<Pattern> dis_pat;
  for (std::size_t i = 0; i < cfg.distractors; ++i) {
    dis.push_back(make_mover(cfg.target_min_side, cfg.target_max_side, cfg.speed * rng.uniform(0.5, 1.5)));
    Pattern p = target;
    const Color ra = random_color(rng), rb = random_color(rng);
    for (int c = 0; c < 3; ++c) {
      p.a[c] = cfg.distractor_similarity * target.a[c] + (1 - cfg.distractor_similarity) * ra[c];
      p.b[c] = cfg.distractor_similarity * target.b[c] + (1 - cfg.distractor_similarity) * rb[c];
    }
    p.kind = static_cast<int>(rng.below(3));
    dis_pat.push_back(p);
  }
  const Color occluder = random_color(rng);

  Sequence seq;
  for (std::size_t t = 0; t < cfg.length; ++t) {
    if (t > 0) {
      const double s = std::clamp(std::pow(1.0 + cfg.scale_drift, static_cast<double>(t)), 0.67, 1.5);
      const double cx = tgt.x + 0.5 * tgt.w, cy = tgt.y + 0.5 * tgt.h;
      tgt.w = w0 * s;
      tgt.h = h0 * s;
      tgt.x = cx - 0.5 * tgt.w;
      tgt.y = cy - 0.5 * tgt.h;
      tgt.step(rng, fw, fh, 0.05);
      for (auto& d : dis) d.step(rng, fw, fh, 0.08);
    }
    Image frame = background;
    for (std::size_t i = 0; i < dis.size(); ++i) {
      fill_rect(frame, std::lround(dis[i].x), std::lround(dis[i].y), std::lround(dis[i].w), std::lround(dis[i].h),
                dis_pat[i]);
    }
    Pattern cur = target;
    const double angle = cfg.drift * static_cast<double>(t);
    cur.a = hue_rotate(target.a, angle);
    cur.b = hue_rotate(target.b, -0.5 * angle);
    cur.period = target.period * (1.0 + 0.5 * std::min(1.0, cfg.drift * static_cast<double>(t)));

    // rendered position with jitter, kept inside the frame
    const double jx = cfg.jitter > 0 ? rng.normal(0.0, cfg.jitter) : 0.0;
    const double jy = cfg.jitter > 0 ? rng.normal(0.0, cfg.jitter) : 0.0;
    const long bw = std::max(4L, std::lround(tgt.w)), bh = std::max(4L, std::lround(tgt.h));
    const long bx = std::clamp(std::lround(tgt.x + jx), 1L, static_cast<long>(cfg.frame_width) - bw - 1);
    const long by = std::clamp(std::lround(tgt.y + jy), 1L, static_cast<long>(cfg.frame_height) - bh - 1);
    fill_rect(frame, bx, by, bw, bh, cur);

    for (const auto& [start, dur] : cfg.occlusions) {
      if (t >= start && t < start + dur) {
        Pattern occ{occluder, occluder, 0, 4.0};
        fill_rect(frame, bx + bw / 2, by - 2, bw / 2 + 3, bh + 4, occ);
      }
    }
    seq.frames.push_back(std::move(frame));
    seq.boxes.push_back(PixelBox{static_cast<double>(bx), static_cast<double>(by), static_cast<double>(bw),
                                 static_cast<double>(bh)});
  }
  return seq;
}

std::vector<PixelBox> read_groundtruth(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<PixelBox> boxes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    PixelBox b;
    if (!(ss >> b.x >> b.y >> b.w >> b.h)) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected x,y,w,h");
    }
    boxes.push_back(b);
  }
  return boxes;
}

void write_groundtruth(const fs::path& file, const std::vector<PixelBox>& boxes) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& b : boxes) out << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';
}

namespace {

fs::path frame_path(const fs::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "%05zu.ppm", i);
  return dir / "frames" / name;
}

}  // namespace

void write_sequence(const fs::path& dir, const Sequence& seq) {
  fs::create_directories(dir / "frames");
  for (std::size_t i = 0; i < seq.size(); ++i) write_ppm(frame_path(dir, i), seq.frames[i]);
  write_groundtruth(dir / "groundtruth.txt", seq.boxes);
}

Sequence read_sequence(const fs::path& dir) {
  Sequence seq;
  seq.boxes = read_groundtruth(dir / "groundtruth.txt");
  for (std::size_t i = 0; i < seq.boxes.size(); ++i) {
    const auto p = frame_path(dir, i);
    if (!fs::exists(p)) throw DataError("missing frame " + p.string());
    seq.frames.push_back(read_ppm(p));
  }
  if (seq.frames.empty()) throw DataError(dir.string() + ": empty sequence");
  return seq;
}

std::vector<fs::path> list_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
  if (fs::exists(root / "groundtruth.txt")) return {root};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "groundtruth.txt")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError("no sequences under " + root.string());
  return out;
}

}  // namespace grtrack
