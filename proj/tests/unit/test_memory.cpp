#include <doctest.h>

#include <deque>

#include "grtrack/errors.hpp"
#include "grtrack/memory.hpp"
#include "support.hpp"

using namespace grtrack;
using grtrack::testing::random_tensor;

namespace {

TokenSeq make_tokens(std::size_t n, std::size_t dim, int frame, TokenKind kind, Rng& rng) {
  TokenSeq s;
  s.embeddings = random_tensor({n, dim}, rng, 1.0);
  for (std::size_t i = 0; i < n; ++i) s.provenance.push_back({frame, static_cast<int>(i), kind});
  return s;
}

EncoderConfig tiny_cfg() {
  EncoderConfig c;
  c.dim = 8;
  c.heads = 2;
  c.ranking_hidden = {8, 4};
  return c;
}

bool same_tokens(const TokenSeq& a, const TokenSeq& b) {
  if (a.provenance != b.provenance) return false;
  for (std::size_t i = 0; i < a.embeddings.numel(); ++i)
    if (a.embeddings[i] != b.embeddings[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("schedule intervals and due frames") {
  UpdateSchedule s;
  CHECK(s.interval(50) == 5);
  CHECK(s.interval(100) == 5);
  CHECK(s.interval(101) == 10);
  CHECK(s.interval(150) == 10);
  CHECK(s.interval(250) == 20);
  CHECK(s.interval(350) == 40);
  CHECK(s.interval(450) == 80);
  CHECK(s.interval(500) == 80);
  CHECK(s.interval(501) == 160);
  CHECK(s.interval(700) == 160);

  std::vector<std::size_t> updates;
  std::size_t last = 0;
  for (std::size_t t = 1; t <= 120; ++t) {
    if (s.due(t, last)) {
      updates.push_back(t);
      last = t;
    }
  }
  std::vector<std::size_t> expect;
  for (std::size_t t = 5; t <= 100; t += 5) expect.push_back(t);
  expect.push_back(110);
  expect.push_back(120);
  CHECK(updates == expect);
}

TEST_CASE("policy names round trip") {
  for (auto p : {MemoryPolicy::kOneTemplate, MemoryPolicy::kFifo, MemoryPolicy::kScore, MemoryPolicy::kGr})
    CHECK(parse_policy(policy_name(p)) == p);
  CHECK_THROWS_AS(parse_policy("lru"), ConfigError);
}

TEST_CASE("init_memory checks the token count and tags the anchor") {
  Rng rng(3);
  const auto tpl = make_tokens(16, 8, 0, TokenKind::kTemplate, rng);
  CHECK_THROWS_AS(init_memory(tpl, 15), DimensionError);
  const auto m = init_memory(tpl, 16);
  CHECK(m.capacity == 48);
  CHECK(m.dynamic.empty());
  for (const auto& p : m.anchor.provenance) CHECK(p.kind == TokenKind::kAnchor);
  CHECK_FALSE(m.anchor.embeddings.requires_grad());
}

TEST_CASE("fifo matches a queue of frame ids") {
  Rng rng(11);
  const std::size_t nz = 16;
  auto m = init_memory(make_tokens(nz, 8, 0, TokenKind::kTemplate, rng), nz, 4 * nz);
  const TokenSeq search = make_tokens(4, 8, 0, TokenKind::kSearch, rng);
  std::deque<int> oracle;
  for (int f = 1; f <= 60; ++f) {
    m = update_memory(m, make_tokens(nz, 8, f, TokenKind::kTemplate, rng), search, 0.5, MemoryPolicy::kFifo, nullptr);
    oracle.push_back(f);
    if (oracle.size() > 3) oracle.pop_front();
    REQUIRE(m.slot_count() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      CHECK(m.slot_frames[i] == oracle[i]);
      for (std::size_t j = 0; j < nz; ++j) CHECK(m.dynamic.provenance[i * nz + j].frame_id == oracle[i]);
    }
    CHECK(m.size() <= m.capacity);
  }
}

TEST_CASE("score policy replaces the weakest slot only on a strictly better score") {
  Rng rng(5);
  const std::size_t nz = 4;
  auto m = init_memory(make_tokens(nz, 8, 0, TokenKind::kTemplate, rng), nz, 3 * nz);
  const TokenSeq search = make_tokens(4, 8, 0, TokenKind::kSearch, rng);
  auto upd = [&](int f, double s) {
    m = update_memory(m, make_tokens(nz, 8, f, TokenKind::kTemplate, rng), search, s, MemoryPolicy::kScore, nullptr);
  };
  upd(1, 0.5);
  upd(2, 0.3);
  CHECK(m.slot_frames == std::vector<int>{1, 2});
  upd(3, 0.3);  // tie with the minimum: kept out
  CHECK(m.slot_frames == std::vector<int>{1, 2});
  upd(4, 0.9);
  CHECK(m.slot_frames == std::vector<int>{1, 4});
  CHECK(m.slot_scores == std::vector<double>{0.5, 0.9});

  // constant scores: the memory freezes once full
  for (int f = 5; f < 20; ++f) upd(f, 0.1);
  CHECK(m.slot_frames == std::vector<int>{1, 4});
}

TEST_CASE("one_template never changes the memory") {
  Rng rng(8);
  auto m = init_memory(make_tokens(16, 8, 0, TokenKind::kTemplate, rng), 16);
  const auto before = m.tokens();
  for (int f = 1; f < 10; ++f) {
    m = update_memory(m, make_tokens(16, 8, f, TokenKind::kTemplate, rng), make_tokens(4, 8, f, TokenKind::kSearch, rng),
                      1.0, MemoryPolicy::kOneTemplate, nullptr);
  }
  CHECK(same_tokens(m.tokens(), before));
}

TEST_CASE("select_gr keeps the top scores with ties to the earlier token") {
  Rng rng(9);
  const std::size_t nz = 4;
  auto m = init_memory(make_tokens(nz, 8, 0, TokenKind::kTemplate, rng), nz, 3 * nz);
  m.dynamic = make_tokens(2 * nz, 8, 1, TokenKind::kTemplate, rng);
  const auto fresh = make_tokens(nz, 8, 7, TokenKind::kTemplate, rng);

  SUBCASE("constant scores keep the oldest tokens") {
    std::vector<double> scores(3 * nz, 0.25);
    const auto out = select_gr(m, fresh, scores);
    CHECK(out.dynamic.size() == 2 * nz);
    for (const auto& p : out.dynamic.provenance) CHECK(p.frame_id == 1);
  }
  SUBCASE("best scores win wherever they sit") {
    std::vector<double> scores(3 * nz, 0.0);
    for (std::size_t i = 2 * nz; i < 3 * nz; ++i) scores[i] = 1.0;  // the new template
    scores[0] = scores[5] = scores[6] = scores[7] = 0.5;
    const auto out = select_gr(m, fresh, scores);
    std::vector<int> frames, idx;
    for (const auto& p : out.dynamic.provenance) {
      frames.push_back(p.frame_id);
      idx.push_back(p.spatial_index);
    }
    CHECK(frames == std::vector<int>{1, 1, 1, 1, 7, 7, 7, 7});
    CHECK(idx == std::vector<int>{0, 5, 6, 7, 0, 1, 2, 3});
  }
  SUBCASE("wrong score count") {
    std::vector<double> scores(5, 0.0);
    CHECK_THROWS_AS(select_gr(m, fresh, scores), DimensionError);
  }
}

TEST_CASE("gr with the token filter keeps the anchor and the capacity") {
  Rng rng(21);
  const auto cfg = tiny_cfg();
  const auto filter = TokenFilterParams::init(cfg, rng);
  const std::size_t nz = 16;
  auto m = init_memory(make_tokens(nz, cfg.dim, 0, TokenKind::kTemplate, rng), nz);
  const auto anchor = m.anchor;
  for (int f = 1; f <= 8; ++f) {
    const auto search = make_tokens(9, cfg.dim, f, TokenKind::kSearch, rng);
    m = update_memory(m, make_tokens(nz, cfg.dim, f, TokenKind::kTemplate, rng), search, 0.0, MemoryPolicy::kGr,
                      &filter);
    CHECK(m.size() == std::min<std::size_t>(nz * (f + 1), 3 * nz));
    CHECK(same_tokens(m.anchor, anchor));
    for (const auto& p : m.dynamic.provenance) CHECK(p.kind == TokenKind::kTemplate);
  }
  const auto scores = token_filter(m, make_tokens(nz, cfg.dim, 9, TokenKind::kTemplate, rng),
                                   make_tokens(9, cfg.dim, 9, TokenKind::kSearch, rng), filter);
  CHECK(scores.size() == 4 * nz);
  for (double s : scores) CHECK((s >= 0.0 && s <= 1.0));
}

TEST_CASE("gr without filter parameters is a config error once full") {
  Rng rng(2);
  auto m = init_memory(make_tokens(4, 8, 0, TokenKind::kTemplate, rng), 4, 8);
  const auto search = make_tokens(4, 8, 0, TokenKind::kSearch, rng);
  m = update_memory(m, make_tokens(4, 8, 1, TokenKind::kTemplate, rng), search, 0.0, MemoryPolicy::kGr, nullptr);
  CHECK_THROWS_AS(
      update_memory(m, make_tokens(4, 8, 2, TokenKind::kTemplate, rng), search, 0.0, MemoryPolicy::kGr, nullptr),
      ConfigError);
}
