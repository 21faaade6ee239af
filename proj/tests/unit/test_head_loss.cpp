#include <doctest.h>

#include <cmath>

#include "grtrack/gradcheck.hpp"
#include "grtrack/head.hpp"
#include "grtrack/loss.hpp"
#include "grtrack/ops.hpp"
#include "support.hpp"

using namespace grtrack;
using grtrack::testing::random_tensor;

namespace {

ScoreMaps manual_maps(std::size_t g, Cell peak, double ex, double ey, double w, double h) {
  ScoreMaps m;
  m.score = Tensor::zeros({1, g, g});
  m.score.mutable_data()[peak.y * g + peak.x] = 0.9;
  m.offset = Tensor::zeros({2, g, g});
  for (std::size_t i = 0; i < g * g; ++i) {
    m.offset.mutable_data()[i] = ex;
    m.offset.mutable_data()[g * g + i] = ey;
  }
  m.size = Tensor::zeros({2, g, g});
  for (std::size_t i = 0; i < g * g; ++i) {
    m.size.mutable_data()[i] = w;
    m.size.mutable_data()[g * g + i] = h;
  }
  return m;
}

}  // namespace

TEST_CASE("head_forward shapes and bounds") {
  Rng rng(1);
  auto cfg = EncoderConfig::desk();
  auto head = HeadParams::init(cfg, rng);
  auto maps = head_forward(random_tensor({64, 64}, rng, 1.0), head);
  CHECK(maps.score.shape() == Shape{1, 8, 8});
  CHECK(maps.offset.shape() == Shape{2, 8, 8});
  CHECK(maps.size.shape() == Shape{2, 8, 8});
  for (const Tensor* t : {&maps.score, &maps.offset, &maps.size})
    for (double v : t->data()) CHECK((v >= 0.0 && v <= 1.0));
  CHECK_THROWS_AS(head_forward(random_tensor({60, 64}, rng, 1.0), head), DimensionError);
}

TEST_CASE("head gradient") {
  Rng rng(2);
  auto cfg = EncoderConfig::desk();
  cfg.dim = 6;
  cfg.heads = 2;
  cfg.head_channels = {4, 3};
  auto head = HeadParams::init(cfg, rng);
  auto tokens = random_tensor({16, 6}, rng, 1.0, true);
  auto w = random_tensor({5, 4, 4}, rng, 1.0);
  auto loss = [&] {
    auto m = head_forward(tokens, head);
    std::vector<Tensor> parts{m.score, m.offset, m.size};
    return ops::sum(ops::mul(ops::pack(parts), ops::reshape(w, {80})));
  };
  ParamList params;
  head.collect("head", params);
  std::vector<Tensor> ts{tokens};
  for (auto& p : params) ts.push_back(p.tensor);
  CHECK(finite_diff_check(loss, sampled_coordinates(ts, 6, 4)).max_rel_error < 1e-4);
}

TEST_CASE("assemble_box") {
  auto m = manual_maps(8, {3, 4}, 0.0, 0.0, 0.5, 0.25);
  auto b = assemble_box(m);
  CHECK(b.cx == doctest::Approx(3.0 / 8));
  CHECK(b.cy == doctest::Approx(4.0 / 8));
  CHECK(b.w == 0.5);
  CHECK(b.h == 0.25);

  auto shifted = assemble_box(manual_maps(8, {3, 4}, 0.5, 0.5, 0.5, 0.25));
  CHECK(shifted.cx - b.cx == doctest::Approx(0.5 / 8));
  CHECK(shifted.cy - b.cy == doctest::Approx(0.5 / 8));

  auto uniform = m;
  uniform.score = Tensor::full({1, 8, 8}, 0.3);
  CHECK(peak_cell(uniform) == Cell{0, 0});

  // strictly monotone rescaling of R leaves the box alone
  Rng rng(3);
  m.score = ops::sigmoid(random_tensor({1, 8, 8}, rng, 2.0));
  auto before = assemble_box(m);
  m.score = ops::exp(ops::scale(m.score, 3.0));
  CHECK(assemble_box(m) == before);

  auto t = box_at_cell(manual_maps(8, {3, 4}, 0.25, 0.5, 0.5, 0.25), Cell{2, 6});
  CHECK(t[0] == doctest::Approx(2.25 / 8));
  CHECK(t[1] == doctest::Approx(6.5 / 8));
}

TEST_CASE("gaussian_target") {
  BBox centered{0.5, 0.5, 0.3, 0.3};
  auto g = gaussian_target(centered, 8);
  CHECK(g.shape() == Shape{1, 8, 8});
  const Cell c = center_cell(centered, 8);
  CHECK(c == Cell{4, 4});
  CHECK(g[4 * 8 + 4] == 1.0);
  auto at = [&](std::size_t x, std::size_t y) { return g[y * 8 + x]; };
  for (std::size_t d = 1; d <= 3; ++d) {
    CHECK(at(4 + d, 4) == at(4 - d, 4));
    CHECK(at(4, 4 + d) == at(4, 4 - d));
    CHECK(at(4 + d, 4) == at(4, 4 + d));
    CHECK(at(4 + d, 4) < at(4 + d - 1, 4));
  }
  // larger boxes spread further
  auto wide = gaussian_target(BBox{0.5, 0.5, 0.8, 0.8}, 8);
  CHECK(wide[4 * 8 + 6] > g[4 * 8 + 6]);
}

TEST_CASE("giou loss examples") {
  Tensor b({4}, {0.4, 0.5, 0.2, 0.3});
  CHECK(std::abs(giou_loss(b, b).item()) < 1e-12);

  Tensor a({4}, {1, 1, 2, 2});
  Tensor c({4}, {2, 2, 2, 2});
  const double expect = 1.0 - (1.0 / 7.0 - 2.0 / 9.0);
  CHECK(giou_loss(a, c).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(giou_loss(a, c).item() == doctest::Approx(1.0794).epsilon(1e-4));
  CHECK(giou(BBox{1, 1, 2, 2}, BBox{2, 2, 2, 2}) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0));
  CHECK(iou(BBox{1, 1, 2, 2}, BBox{2, 2, 2, 2}) == doctest::Approx(1.0 / 7.0));

  CHECK_THROWS_AS(giou_loss(a, Tensor({4}, {1, 1, 0, 2})), std::invalid_argument);
}

TEST_CASE("focal loss at a single positive") {
  Tensor p({1, 1, 1}, {0.9});
  Tensor t({1, 1, 1}, {1.0});
  const double expect = -(0.1 * 0.1) * std::log(0.9);
  CHECK(focal_loss(p, t).item() == doctest::Approx(expect).epsilon(1e-9));
  CHECK(focal_loss(p, t).item() == doctest::Approx(1.054e-3).epsilon(1e-3));

  // negative pixel: -(1-t)^4 p^2 log(1-p)
  Tensor p2({1, 1, 2}, {0.9, 0.3});
  Tensor t2({1, 1, 2}, {1.0, 0.5});
  const double neg = -std::pow(0.5, 4) * 0.09 * std::log(0.7);
  CHECK(focal_loss(p2, t2).item() == doctest::Approx(expect + neg).epsilon(1e-9));
}

TEST_CASE("ratio loss values") {
  std::vector<double> q{0.9, 0.8, 0.7};
  std::vector<std::vector<Tensor>> keep_all{{Tensor::full({10}, 1.0), Tensor::full({10}, 1.0), Tensor::full({10}, 1.0)}};
  CHECK(std::abs(ratio_loss(keep_all, q).item() - 0.14 / 3.0) < 1e-12);

  auto exact = [](std::size_t kept) {
    std::vector<double> d(10, 0.0);
    for (std::size_t i = 0; i < kept; ++i) d[i] = 1.0;
    return Tensor({10}, d);
  };
  std::vector<std::vector<Tensor>> match{{exact(9), exact(8), exact(7)}, {exact(9), exact(8), exact(7)}};
  CHECK(std::abs(ratio_loss(match, q).item()) < 1e-15);
}

TEST_CASE("total loss weights and checks") {
  LossParts ones{Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1), Tensor::scalar(1)};
  CHECK(total_loss(ones).item() == 9.0);
  LossParts zeros{Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0)};
  CHECK(total_loss(zeros).item() == 0.0);
  LossParts bad = ones;
  bad.l1 = Tensor::scalar(std::nan(""));
  try {
    total_loss(bad);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("l1") != std::string::npos);
  }
}

TEST_CASE("loss gradients") {
  Rng rng(5);
  SUBCASE("focal") {
    auto logits = random_tensor({1, 4, 4}, rng, 1.0, true);
    auto target = gaussian_target(BBox{0.4, 0.6, 0.5, 0.4}, 4);
    auto loss = [&] { return focal_loss(ops::sigmoid(logits), target); };
    CHECK(finite_diff_check(loss, all_coordinates({logits})).max_rel_error < 1e-4);
  }
  SUBCASE("giou and l1") {
    auto raw = random_tensor({4}, rng, 0.5, true);
    Tensor gt({4}, {0.5, 0.45, 0.3, 0.35});
    auto pred = [&] { return ops::sigmoid(raw); };
    CHECK(finite_diff_check([&] { return giou_loss(pred(), gt); }, all_coordinates({raw})).max_rel_error < 1e-4);
    CHECK(finite_diff_check([&] { return l1_loss(pred(), gt); }, all_coordinates({raw})).max_rel_error < 1e-4);
  }
  SUBCASE("ratio") {
    auto a = random_tensor({6}, rng, 1.0, true);
    auto b = random_tensor({6}, rng, 1.0, true);
    std::vector<double> q{0.9, 0.8};
    auto loss = [&] {
      std::vector<std::vector<Tensor>> d{{ops::sigmoid(a), ops::sigmoid(b)}};
      return ratio_loss(d, q);
    };
    CHECK(finite_diff_check(loss, all_coordinates({a, b})).max_rel_error < 1e-4);
  }
  SUBCASE("total equals the weighted sum of part gradients") {
    auto x = random_tensor({3}, rng, 1.0, true);
    auto parts = [&] {
      return LossParts{ops::sum(ops::square(x)), ops::sum(ops::exp(x)), ops::mean(ops::abs(x)),
                       ops::sum(ops::sigmoid(x))};
    };
    auto t = total_loss(parts());
    t.backward();
    std::vector<double> g_total(x.grad().begin(), x.grad().end());
    x.zero_grad();
    const double w[4] = {1, 2, 5, 1};
    std::vector<double> g_sum(3, 0.0);
    for (int i = 0; i < 4; ++i) {
      auto p = parts();
      Tensor term = i == 0 ? p.focal : i == 1 ? p.giou : i == 2 ? p.l1 : p.ratio;
      term.backward();
      for (std::size_t j = 0; j < 3; ++j) g_sum[j] += w[i] * x.grad()[j];
      x.zero_grad();
    }
    for (std::size_t j = 0; j < 3; ++j) CHECK(g_total[j] == doctest::Approx(g_sum[j]).epsilon(1e-12));
    CHECK(finite_diff_check([&] { return total_loss(parts()); }, all_coordinates({x})).max_rel_error < 1e-4);
  }
}
