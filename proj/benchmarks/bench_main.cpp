#include <benchmark/benchmark.h>

#include "grtrack/metrics.hpp"
#include "grtrack/model.hpp"
#include "grtrack/ops.hpp"
#include "grtrack/relevance.hpp"

using namespace grtrack;

namespace {

Tensor randn(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return Tensor(std::move(shape), std::move(v));
}

TokenSeq reference(const EncoderConfig& cfg, std::size_t n, Rng& rng) {
  TokenSeq s{randn({n, cfg.dim}, rng), {}};
  for (std::size_t i = 0; i < n; ++i) s.provenance.push_back({0, static_cast<int>(i), TokenKind::kTemplate});
  return s;
}

// desk model, full 48-token memory, first `range(0)` stages pruning
void BM_InferDesk(benchmark::State& state) {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 1);
  Rng rng(2);
  const auto ref = reference(cfg, 48, rng);
  std::vector<double> img(3 * cfg.search_size * cfg.search_size);
  for (auto& v : img) v = rng.normal(0.0, 1.0);
  InferOptions opt;
  opt.stages = static_cast<std::size_t>(state.range(0));
  NoGradGuard guard;
  for (auto _ : state) {
    auto out = forward_infer(model, ref, model.embed_search(img, 1), opt);
    benchmark::DoNotOptimize(out.maps.score.data().data());
  }
  state.counters["MACs"] = static_cast<double>(count_macs(cfg, 48, opt.stages).total);
}
BENCHMARK(BM_InferDesk)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const auto a = randn({n, n}, rng);
  const auto b = randn({n, n}, rng);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(32, 256);

void BM_TopK(benchmark::State& state) {
  Rng rng(4);
  std::vector<double> s(static_cast<std::size_t>(state.range(0)));
  for (auto& v : s) v = rng.uniform(0.0, 1.0);
  const std::size_t k = s.size() * 9 / 10;
  for (auto _ : state) benchmark::DoNotOptimize(topk_select(s, k).data());
}
BENCHMARK(BM_TopK)->Arg(48)->Arg(192);

void BM_TrainStepDesk(benchmark::State& state) {
  const auto cfg = EncoderConfig::desk();
  const auto model = TrackerModel::init(cfg, 1);
  Rng rng(5);
  TrainSample sample;
  for (int t = 0; t < 3; ++t) {
    sample.templates.emplace_back(3 * cfg.template_size * cfg.template_size);
    for (auto& v : sample.templates.back()) v = rng.normal(0.0, 1.0);
  }
  sample.search.resize(3 * cfg.search_size * cfg.search_size);
  for (auto& v : sample.search) v = rng.normal(0.0, 1.0);
  sample.gt = BBox{0.5, 0.5, 0.3, 0.4};
  const std::vector<TrainSample> batch{sample};
  for (auto _ : state) {
    auto loss = total_loss(compute_loss(model, batch, TrainOptions{}, Rng(6), filter_keep_ratio(cfg, 0)));
    loss.backward();
    for (auto& p : model.parameters()) p.tensor.zero_grad();
  }
}
BENCHMARK(BM_TrainStepDesk)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
