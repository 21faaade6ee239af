#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "grtrack/checkpoint.hpp"
#include "grtrack/config.hpp"
#include "grtrack/errors.hpp"
#include "grtrack/metrics.hpp"
#include "grtrack/model.hpp"
#include "grtrack/optim.hpp"
#include "grtrack/tracker.hpp"
#include "support.hpp"

using namespace grtrack;
using grtrack::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

TokenSeq reference_tokens(const EncoderConfig& cfg, std::size_t n, Rng& rng) {
  TokenSeq s;
  s.embeddings = random_tensor({n, cfg.dim}, rng, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = i < cfg.template_tokens() ? TokenKind::kAnchor : TokenKind::kTemplate;
    s.provenance.push_back({static_cast<int>(i / cfg.template_tokens()), static_cast<int>(i % cfg.template_tokens()), kind});
  }
  return s;
}

std::vector<double> random_image(std::size_t side, Rng& rng) {
  std::vector<double> v(3 * side * side);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

void set_grad(Tensor& t, std::initializer_list<double> g) {
  auto dst = t.mutable_grad();
  std::copy(g.begin(), g.end(), dst.begin());
}

}  // namespace

TEST_CASE("analytic MACs equal the instrumented count on the desk model") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 4);
  Rng rng(17);
  for (std::size_t refs : {16u, 32u, 48u}) {
    const auto ref = reference_tokens(cfg, refs, rng);
    const auto img = random_image(cfg.search_size, rng);
    for (std::size_t stages = 0; stages <= 3; ++stages) {
      NoGradGuard guard;
      MacCounterScope scope;
      const auto search = model.embed_search(img, 1);
      InferOptions opt;
      opt.stages = stages;
      (void)forward_infer(model, ref, search, opt);
      CAPTURE(refs);
      CAPTURE(stages);
      CHECK(scope.count() == count_macs(cfg, refs, stages).total);
    }
  }
}

TEST_CASE("MAC counts shrink with each stage and keep-all equals vanilla") {
  for (const auto& cfg : {EncoderConfig::desk(), EncoderConfig::paper()}) {
    const std::size_t refs = 3 * cfg.template_tokens();
    const auto m0 = count_macs(cfg, refs, 0).total;
    const auto m1 = count_macs(cfg, refs, 1).total;
    const auto m2 = count_macs(cfg, refs, 2).total;
    const auto m3 = count_macs(cfg, refs, 3).total;
    CHECK(m3 < m2);
    CHECK(m2 < m1);
    CHECK(m1 < m0);

    auto keep_all = cfg;
    keep_all.keep_ratios = {1.0, 1.0, 1.0};
    CHECK(count_macs(keep_all, refs, 3).total == m0);
  }
  const auto paper = EncoderConfig::paper();
  const auto rep = count_macs(paper, 192, 3);
  std::vector<std::size_t> live;
  for (const auto& r : rep.rows)
    if (r.part.rfind("layer", 0) == 0) live.push_back(r.reference_tokens);
  CHECK(live == std::vector<std::size_t>{192, 192, 192, 192, 172, 172, 172, 153, 153, 153, 134, 134});
}

TEST_CASE("pruned inference reports its reference counts") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 4);
  Rng rng(2);
  const auto ref = reference_tokens(cfg, 48, rng);
  NoGradGuard guard;
  const auto out = forward_infer(model, ref, model.embed_search(random_image(cfg.search_size, rng), 1));
  CHECK(out.reference_counts == std::vector<std::size_t>{48, 48, 43, 43, 38, 33});
  CHECK(out.maps.score.shape() == Shape{1, 8, 8});
}

TEST_CASE("AdamW step against a hand computation") {
  AdamWConfig c;
  c.lr_fast = 0.1;
  c.lr_slow = 0.01;
  c.weight_decay = 0.5;
  Tensor vec({2}, {1.0, -2.0}, true);     // slow tier, no decay (rank 1)
  Tensor mat({1, 2}, {3.0, 4.0}, true);   // slow tier, decayed
  Tensor head({1}, {0.5}, true);          // fast tier
  AdamW opt({{"blocks.0.ln1.gamma", vec}, {"blocks.0.fc1.weight", mat}, {"head.score.conv0.bias", head}}, c);

  set_grad(vec, {0.5, -0.25});
  set_grad(mat, {2.0, 0.0});
  set_grad(head, {-1.0});
  opt.step();
  // first step: m_hat = g, v_hat = g^2, so the adam move is lr * sign(g) when g != 0
  const double eps = c.eps;
  CHECK(vec[0] == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + eps)));
  CHECK(vec[1] == doctest::Approx(-2.0 + 0.01 * 0.25 / (0.25 + eps)));
  CHECK(mat[0] == doctest::Approx(3.0 - 0.01 * 0.5 * 3.0 - 0.01));
  CHECK(mat[1] == doctest::Approx(4.0 - 0.01 * 0.5 * 4.0));
  CHECK(head[0] == doctest::Approx(0.5 + 0.1));
  CHECK_FALSE(vec.has_grad());
  CHECK(opt.steps() == 1);

  // second step with the same gradient: bias-corrected moments still equal g
  set_grad(vec, {0.5, -0.25});
  const double before = vec[0];
  opt.step();
  CHECK(vec[0] == doctest::Approx(before - 0.01 * 0.5 / (0.5 + eps)));
}

TEST_CASE("gradient clipping scales by the global norm") {
  AdamWConfig c;
  c.lr_slow = 1.0;
  c.weight_decay = 0.0;
  c.grad_clip = 1.0;
  c.beta1 = 0.0;
  c.beta2 = 0.0;
  c.eps = 0.0;
  Tensor p({2}, {0.0, 0.0}, true);
  AdamW opt({{"x", p}}, c);
  set_grad(p, {3.0, 4.0});
  opt.step();
  // with beta = 0 the step is g/|g| elementwise regardless of the clip factor
  CHECK(p[0] == doctest::Approx(-1.0));
  CHECK(p[1] == doctest::Approx(-1.0));
  CHECK(opt.first_moments()[0][0] == doctest::Approx(3.0 / 5.0));
}

TEST_CASE("config presets, overrides and errors") {
  const auto desk = parse_config("{}");
  CHECK(desk.profile == "desk");
  CHECK(desk.model.dim == 64);
  CHECK(desk.train_stage2.templates == 7);
  CHECK(desk.tracker.size_update_rate == 0.25);
  CHECK_FALSE(desk.tracker.hann_window);

  const auto paper = parse_config(R"({"profile": "paper", "memory": {"capacity_tokens": 192}})");
  CHECK(paper.model.dim == 768);
  CHECK(paper.model.relevance_layers == std::vector<std::size_t>{4, 7, 10});
  CHECK(paper.tracker.capacity == 192);
  CHECK(paper.train.optimizer.lr_fast == doctest::Approx(4e-4));
  CHECK(paper.train.optimizer.lr_slow == doctest::Approx(4e-5));
  CHECK(paper.tracker.size_update_rate == 1.0);

  const auto inf = parse_config(R"({"inference": {"hann_window": true, "size_update_rate": 0.5}})");
  CHECK(inf.tracker.hann_window);
  CHECK(parse_config(config_to_json(inf)).tracker.size_update_rate == 0.5);

  const auto o = parse_config(R"({"seed": 9, "loss": {"lambda_l1": 3.5}, "crop": {"search_area_factor": 5.0}})");
  CHECK(o.seed == 9);
  CHECK(o.train.weights.l1 == 3.5);
  CHECK(o.train_stage2.weights.l1 == 3.5);
  CHECK(o.train.search_factor == 5.0);

  CHECK(parse_config(config_to_json(o)).seed == 9);
  CHECK(config_to_json(parse_config(config_to_json(paper))) == config_to_json(paper));

  CHECK_THROWS_AS(parse_config(R"({"modle": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"depht": 3}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"dim": "wide"}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"model": {"dim": 66}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"profile": "huge"})"), ConfigError);
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"inference": {"size_update_rate": 0}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"inference": {"size_update_rate": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"train_stage1": {"lr_fast": -1}})"), ConfigError);
}

TEST_CASE("seed from the environment") {
  ::unsetenv("GRTRACK_SEED");
  CHECK(seed_from_env(5) == 5);
  ::setenv("GRTRACK_SEED", "123", 1);
  CHECK(seed_from_env(5) == 123);
  ::setenv("GRTRACK_SEED", "12x", 1);
  CHECK_THROWS_AS(seed_from_env(5), ConfigError);
  ::unsetenv("GRTRACK_SEED");
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = EncoderConfig::desk();
  auto model = TrackerModel::init(cfg, 1);
  AdamW opt(model.parameters(), AdamWConfig{});
  opt.first_moments()[3][0] = 0.25;
  opt.set_steps(17);
  const auto dir = fs::temp_directory_path() / "grtrack_test_ckpt";
  fs::create_directories(dir);
  const auto file = dir / "m.ckpt";

  Rng rng(3);
  auto memory = init_memory(reference_tokens(cfg, 16, rng), 16);
  memory.dynamic = gather_tokens(reference_tokens(cfg, 32, rng), std::vector<std::size_t>{16, 17, 20});
  auto ckpt = make_checkpoint(model, &opt, config_to_json(AppConfig::desk()));
  put_memory(ckpt, "memory", memory);
  save_checkpoint(file, ckpt);

  const auto loaded = load_checkpoint(file);
  CHECK(loaded.config_json == ckpt.config_json);
  auto other = TrackerModel::init(cfg, 99);
  restore_model(other, loaded);
  const auto a = model.parameters();
  const auto b = other.parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j)
      CHECK(b[i].tensor[j] == static_cast<double>(static_cast<float>(a[i].tensor[j])));

  AdamW opt2(other.parameters(), AdamWConfig{});
  CHECK(restore_optimizer(opt2, loaded));
  CHECK(opt2.steps() == 17);
  CHECK(opt2.first_moments()[3][0] == 0.25);

  const auto mem = get_memory(loaded, "memory");
  CHECK(mem.anchor.provenance == memory.anchor.provenance);
  CHECK(mem.dynamic.provenance == memory.dynamic.provenance);
  CHECK(mem.capacity == memory.capacity);
  CHECK(mem.dynamic.embeddings[5] == static_cast<double>(static_cast<float>(memory.dynamic.embeddings[5])));

  // corrupt files
  {
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), DataError);
    const auto full = fs::file_size(file);
    fs::copy_file(file, dir / "short.ckpt", fs::copy_options::overwrite_existing);
    fs::resize_file(dir / "short.ckpt", full - 100);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), DataError);
    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), DataError);
  }
  auto wrong = EncoderConfig::desk();
  wrong.dim = 32;
  auto small = TrackerModel::init(wrong, 1);
  CHECK_THROWS_AS(restore_model(small, loaded), DataError);
  fs::remove_all(dir);
}

TEST_CASE("tracking is deterministic and frame 0 reports the ground truth") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 5);
  SyntheticSequenceConfig sc;
  sc.length = 12;
  const auto seq = gen_sequence(sc, 4);
  TrackerSettings s;
  const auto a = track_sequence(model, seq, s);
  const auto b = track_sequence(model, seq, s);
  REQUIRE(a.size() == seq.size());
  CHECK(a[0].pred == seq.boxes[0]);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pred == b[i].pred);
    CHECK(a[i].pred.x >= 0.0);
    CHECK(a[i].pred.x + a[i].pred.w <= sc.frame_width + 1e-9);
  }
}

TEST_CASE("size damping blends the previous size with the raw prediction") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 5);
  SyntheticSequenceConfig sc;
  sc.length = 2;
  const auto seq = gen_sequence(sc, 4);
  TrackerSettings raw_s, damp_s;
  damp_s.size_update_rate = 0.3;
  Tracker raw(model, raw_s), damp(model, damp_s);
  raw.init(seq.frames[0], seq.boxes[0]);
  damp.init(seq.frames[0], seq.boxes[0]);
  const PixelBox r = raw.step(seq.frames[1]);
  const PixelBox d = damp.step(seq.frames[1]);
  const auto& g = seq.boxes[0];
  // both boxes have to stay clear of the frame border for the blend to be exact
  REQUIRE(d.x > 0.0);
  REQUIRE(d.y > 0.0);
  REQUIRE(d.x + d.w < sc.frame_width);
  REQUIRE(d.y + d.h < sc.frame_height);
  CHECK(d.w == doctest::Approx(0.7 * g.w + 0.3 * r.w).epsilon(1e-12));
  CHECK(d.h == doctest::Approx(0.7 * g.h + 0.3 * r.h).epsilon(1e-12));
  CHECK(d.x + 0.5 * d.w == doctest::Approx(r.x + 0.5 * r.w).epsilon(1e-12));

  TrackerSettings hs;
  hs.hann_window = true;
  const auto a = track_sequence(model, seq, hs);
  const auto b = track_sequence(model, seq, hs);
  CHECK(a[1].pred == b[1].pred);
}

TEST_CASE("tracker memory follows the schedule") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 5);
  SyntheticSequenceConfig sc;
  sc.length = 21;
  const auto seq = gen_sequence(sc, 4);
  for (auto policy : {MemoryPolicy::kFifo, MemoryPolicy::kGr, MemoryPolicy::kOneTemplate}) {
    TrackerSettings s;
    s.policy = policy;
    Tracker t(model, s);
    t.init(seq.frames[0], seq.boxes[0]);
    const auto anchor = t.state().memory.anchor;
    for (std::size_t i = 1; i < seq.size(); ++i) (void)t.step(seq.frames[i]);
    CHECK(t.state().update_frames == std::vector<std::size_t>{5, 10, 15, 20});
    CHECK(t.state().memory.size() == (policy == MemoryPolicy::kOneTemplate ? 16u : 48u));
    CHECK(t.state().memory.anchor.provenance == anchor.provenance);
    CHECK(grtrack::testing::max_abs_diff(t.state().memory.anchor.embeddings, anchor.embeddings) == 0.0);
  }
}

TEST_CASE("a few optimizer steps lower the loss on a fixed batch") {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 8);
  SyntheticSequenceConfig sc;
  sc.length = 30;
  const auto seq = gen_sequence(sc, 12);
  TrainSettings s;
  s.optimizer.lr_fast = 2e-3;
  s.optimizer.lr_slow = 5e-4;
  Rng rng(4);
  std::vector<TrainSample> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(make_sample(seq, cfg, s, rng));
  CHECK(batch[0].templates.size() == 3);
  CHECK(is_valid_normalized(batch[0].gt));

  AdamW opt(model.parameters(), s.optimizer);
  const double before = evaluate_loss(model, batch, s, 0.5, 3).total;
  TrainOptions o;
  o.tau = 0.5;
  for (int i = 0; i < 8; ++i) (void)train_step(model, opt, batch, o, s, Rng(3, 77));
  const double after = evaluate_loss(model, batch, s, 0.5, 3).total;
  CHECK(after < before);
}
