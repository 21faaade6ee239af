#include <doctest.h>

#include <cmath>
#include <numeric>

#include "grtrack/encoder.hpp"
#include "grtrack/errors.hpp"
#include "grtrack/gradcheck.hpp"
#include "grtrack/ops.hpp"
#include "support.hpp"

using namespace grtrack;
using grtrack::testing::max_abs_diff;
using grtrack::testing::random_tensor;

namespace {

TokenSeq make_tokens(const Tensor& emb, TokenKind kind, int frame = 0) {
  TokenSeq s{emb, {}};
  for (std::size_t i = 0; i < emb.dim(0); ++i) s.provenance.push_back({frame, static_cast<int>(i), kind});
  return s;
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace

TEST_CASE("patchify counts and round trip") {
  std::vector<double> big(3 * 128 * 128, 0.0);
  CHECK(patchify(big, 128, 128, 16).dim(0) == 64);

  Rng rng(3);
  std::vector<double> img(3 * 32 * 32);
  for (auto& v : img) v = rng.uniform();
  auto p = patchify(img, 32, 32, 8);
  CHECK(p.shape() == Shape{16, 192});
  CHECK(unpatchify(p, 32, 32, 8) == img);

  // patch 1 is the second 8x8 block of the top row
  CHECK(p[192 + 0] == img[8]);
  CHECK_THROWS_AS(patchify(img, 32, 32, 7), ConfigError);
}

TEST_CASE("embed of a zero image yields equal tokens up to position") {
  Rng rng(5);
  auto cfg = EncoderConfig::desk();
  auto params = PatchEmbedParams::init(cfg, rng);
  // drop the position table to see the bias-only projection
  params.pos_template = Tensor::zeros(params.pos_template.shape());
  std::vector<double> zero(3 * 32 * 32, 0.0);
  auto toks = embed(patchify(zero, 32, 32, 8), params, ImageRole::kTemplate, 7, TokenKind::kAnchor);
  CHECK(toks.embeddings.shape() == Shape{16, 64});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 64; ++c) CHECK(toks.embeddings[i * 64 + c] == toks.embeddings[c]);
  CHECK(toks.provenance[5].frame_id == 7);
  CHECK(toks.provenance[5].spatial_index == 5);
  CHECK(toks.provenance[5].kind == TokenKind::kAnchor);
}

TEST_CASE("embed gradient wrt projection") {
  Rng rng(9);
  EncoderConfig cfg = EncoderConfig::desk();
  cfg.dim = 8;
  cfg.heads = 2;
  auto params = PatchEmbedParams::init(cfg, rng);
  std::vector<double> img(3 * 32 * 32);
  for (auto& v : img) v = rng.uniform();
  auto patches = patchify(img, 32, 32, 8);
  auto target = random_tensor({16, 8}, rng, 1.0);
  auto loss = [&] {
    auto t = embed(patches, params, ImageRole::kTemplate, 0, TokenKind::kTemplate);
    return ops::sum(ops::mul(ops::gelu(t.embeddings), target));
  };
  auto rep = finite_diff_check(loss, sampled_coordinates({params.proj.weight, params.proj.bias}, 40, 1));
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("mha: self attention of a single token and row sums") {
  Rng rng(1);
  auto attn = AttentionParams::init(8, 2, rng);
  auto one = make_tokens(random_tensor({1, 8}, rng, 1.0), TokenKind::kSearch);
  auto r = mha(one, one, one, attn);
  CHECK(r.weights.shape() == Shape{2, 1, 1});
  CHECK(r.weights[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.weights[1] == doctest::Approx(1.0).epsilon(1e-15));

  auto q = make_tokens(random_tensor({5, 8}, rng, 1.0), TokenKind::kSearch);
  auto kv = make_tokens(random_tensor({7, 8}, rng, 1.0), TokenKind::kTemplate);
  auto m = mha(q, kv, kv, attn);
  CHECK(m.weights.shape() == Shape{2, 5, 7});
  for (std::size_t row = 0; row < 10; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += m.weights[row * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  auto short_v = make_tokens(random_tensor({6, 8}, rng, 1.0), TokenKind::kTemplate);
  CHECK_THROWS_AS(mha(q, kv, short_v, attn), DimensionError);
}

TEST_CASE("mha: permuting keys and values permutes weight columns") {
  Rng rng(2);
  auto attn = AttentionParams::init(8, 2, rng);
  auto q = make_tokens(random_tensor({4, 8}, rng, 1.0), TokenKind::kSearch);
  auto kv = make_tokens(random_tensor({6, 8}, rng, 1.0), TokenKind::kTemplate);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto kv_p = gather_tokens(kv, perm);
  auto a = mha(q, kv, kv, attn);
  auto b = mha(q, kv_p, kv_p, attn);
  double worst = 0.0;
  for (std::size_t row = 0; row < 8; ++row)
    for (std::size_t j = 0; j < 6; ++j)
      worst = std::max(worst, std::abs(b.weights[row * 6 + j] - a.weights[row * 6 + perm[j]]));
  CHECK(worst < 1e-12);
  CHECK(max_abs_diff(a.out.embeddings, b.out.embeddings) < 1e-12);
}

TEST_CASE("vit_block keeps tokens and provenance; zero output projections give identity") {
  Rng rng(4);
  auto block = BlockParams::init(16, 4, 4, rng);
  auto toks = make_tokens(random_tensor({9, 16}, rng, 1.0), TokenKind::kSearch, 3);
  auto out = vit_block(toks, block);
  CHECK(out.size() == 9);
  CHECK(out.provenance == toks.provenance);

  block.attn.proj.weight = Tensor::zeros(block.attn.proj.weight.shape());
  block.attn.proj.bias = Tensor::zeros(block.attn.proj.bias.shape());
  block.fc2.weight = Tensor::zeros(block.fc2.weight.shape());
  block.fc2.bias = Tensor::zeros(block.fc2.bias.shape());
  CHECK(max_abs_diff(vit_block(toks, block).embeddings, toks.embeddings) == 0.0);
}

TEST_CASE("gradient through two stacked blocks") {
  Rng rng(6);
  auto b1 = BlockParams::init(8, 2, 2, rng);
  auto b2 = BlockParams::init(8, 2, 2, rng);
  auto x = random_tensor({5, 8}, rng, 1.0, true);
  auto target = random_tensor({5, 8}, rng, 1.0);
  ParamList params;
  b1.collect("b1", params);
  b2.collect("b2", params);
  // larger weights so the check is not dominated by near-zero gradients
  for (auto& p : params)
    if (p.tensor.rank() == 2)
      for (auto& v : p.tensor.mutable_data()) v *= 20.0;
  auto loss = [&] { return ops::sum(ops::mul(vit_block(vit_block(x, b1), b2), target)); };
  auto tensors = tensors_of(params);
  tensors.push_back(x);
  auto rep = finite_diff_check(loss, sampled_coordinates(tensors, 6, 2));
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("encoder config validation and presets") {
  auto desk = EncoderConfig::desk();
  CHECK_NOTHROW(desk.validate());
  CHECK(desk.template_tokens() == 16);
  CHECK(desk.search_tokens() == 64);
  auto paper = EncoderConfig::paper();
  CHECK_NOTHROW(paper.validate());
  CHECK(paper.template_tokens() == 64);
  CHECK(paper.search_tokens() == 256);
  CHECK(paper.relevance_layers == std::vector<std::size_t>{4, 7, 10});

  auto bad = desk;
  bad.relevance_layers = {2, 7};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk;
  bad.search_size = 60;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = desk;
  bad.heads = 5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
