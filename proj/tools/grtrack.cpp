#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "grtrack/ablation.hpp"
#include "grtrack/checkpoint.hpp"
#include "grtrack/config.hpp"
#include "grtrack/data.hpp"
#include "grtrack/errors.hpp"
#include "grtrack/metrics.hpp"
#include "grtrack/tracker.hpp"

namespace fs = std::filesystem;
using namespace grtrack;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::vector<Sequence> load_sequences(const fs::path& root) {
  std::vector<Sequence> out;
  for (const auto& dir : list_sequences(root)) out.push_back(read_sequence(dir));
  if (out.empty()) throw DataError("no sequences under " + root.string());
  return out;
}

struct Loaded {
  AppConfig cfg;
  TrackerModel model;
};

Loaded load_model(const fs::path& file) {
  const Checkpoint ckpt = load_checkpoint(file);
  AppConfig cfg = parse_config(ckpt.config_json);
  TrackerModel model = TrackerModel::init(cfg.model, cfg.seed);
  restore_model(model, ckpt);
  return {std::move(cfg), std::move(model)};
}

FILE* open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  FILE* f = std::fopen(file.string().c_str(), "w");
  if (f == nullptr) throw DataError("cannot write " + file.string());
  return f;
}

// --- subcommands -----------------------------------------------------------

struct GenArgs {
  fs::path out;
  std::size_t seqs = 1, len = 100;
  std::optional<std::uint64_t> seed;
  double drift = 0.0;
  std::size_t distractors = 0;
};

void gen_data(const GenArgs& a) {
  SyntheticSequenceConfig sc;
  sc.length = a.len;
  sc.drift = a.drift;
  sc.distractors = a.distractors;
  sc.validate();
  const std::uint64_t seed = a.seed ? *a.seed : seed_from_env(1);
  fs::create_directories(a.out);
  parallel_for(a.seqs, 0, [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof name, "seq_%03zu", i);
    write_sequence(a.out / name, gen_sequence(sc, seed + i));
  });
  std::printf("wrote %zu sequences of %zu frames to %s\n", a.seqs, a.len, a.out.string().c_str());
}

struct TrainArgs {
  fs::path config, data, out;
  int stage = 1;
  std::optional<fs::path> resume;
};

void train_cmd(const TrainArgs& a) {
  AppConfig cfg = load_config(a.config);
  cfg.seed = seed_from_env(cfg.seed);
  TrainSettings settings = a.stage == 2 ? cfg.train_stage2 : cfg.train;
  settings.seed = cfg.seed;
  const auto sequences = load_sequences(a.data);

  TrackerModel model = TrackerModel::init(cfg.model, cfg.seed);
  AdamW optimizer(model.parameters(), settings.optimizer);
  if (a.resume) {
    const Checkpoint ckpt = load_checkpoint(*a.resume);
    restore_model(model, ckpt);
    // a stage-2 run starts with fresh moments from the stage-1 weights
    if (a.stage == 1) restore_optimizer(optimizer, ckpt);
  }
  const auto start = std::chrono::steady_clock::now();
  train(model, optimizer, sequences, settings, [&](std::size_t step, const LossValues& v) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::fprintf(stderr, "step %5zu  total %.5f  focal %.5f  giou %.5f  l1 %.5f  ratio %.5f  (%.1fs)\n", step,
                 v.total, v.focal, v.giou, v.l1, v.ratio, secs);
  });
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  save_checkpoint(a.out, make_checkpoint(model, &optimizer, config_to_json(cfg)));
  std::printf("saved %s after %llu steps\n", a.out.string().c_str(),
              static_cast<unsigned long long>(optimizer.steps()));
}

struct TrackArgs {
  fs::path ckpt, seq, out;
  std::string policy = "gr";
};

void track_cmd(const TrackArgs& a) {
  const MemoryPolicy policy = parse_policy(a.policy);
  auto [cfg, model] = load_model(a.ckpt);
  TrackerSettings s = cfg.tracker;
  s.policy = policy;
  const auto results = track_sequence(model, read_sequence(a.seq), s);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_results(a.out, results);
  std::printf("%s: %zu frames, AUC %.4f\n", a.seq.string().c_str(), results.size(), success_auc(results));
}

struct EvalArgs {
  fs::path results, gt, out;
};

void eval_cmd(const EvalArgs& a) {
  auto results = read_results(a.results);
  const fs::path gt_file = fs::is_directory(a.gt) ? a.gt / "groundtruth.txt" : a.gt;
  const auto gt = read_groundtruth(gt_file);
  if (gt.size() != results.size()) {
    throw DataError("results have " + std::to_string(results.size()) + " frames, ground truth " +
                    std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < results.size(); ++i) results[i].gt = gt[i];
  FILE* f = open_out(a.out);
  std::fprintf(f, "metric,value\n");
  std::fprintf(f, "frames,%zu\n", results.size());
  std::fprintf(f, "success_auc,%.6f\n", success_auc(results));
  for (double px : {5.0, 10.0, 20.0}) std::fprintf(f, "precision_%gpx,%.6f\n", px, precision(results, px));
  std::fprintf(f, "mean_iou,%.6f\n", mean_iou(results));
  std::fclose(f);
  std::printf("AUC %.4f  P@20 %.4f  mIoU %.4f\n", success_auc(results), precision(results, 20.0),
              mean_iou(results));
}

struct BenchArgs {
  fs::path config, out;
  std::optional<std::size_t> stages;
};

void bench_macs(const BenchArgs& a) {
  const AppConfig cfg = load_config(a.config);
  const std::size_t n_stages = cfg.model.relevance_layers.size();
  if (a.stages && *a.stages > n_stages) {
    throw ConfigError("--stages " + std::to_string(*a.stages) + " exceeds the " + std::to_string(n_stages) +
                      " relevance stages of the config");
  }
  const std::size_t refs = cfg.tracker.capacity ? cfg.tracker.capacity : 3 * cfg.model.template_tokens();
  const auto vanilla = count_macs(cfg.model, refs, 0).total;
  FILE* f = open_out(a.out);
  std::fprintf(f, "config,stages,part,reference_tokens,live_tokens,attention,ffn,ranking,other,total,ratio_vs_0\n");
  for (std::size_t s = a.stages.value_or(0); s <= a.stages.value_or(n_stages); ++s) {
    const auto rep = count_macs(cfg.model, refs, s);
    for (const auto& r : rep.rows) {
      std::fprintf(f, "%s,%zu,%s,%zu,%zu,%llu,%llu,%llu,%llu,%llu,\n", cfg.profile.c_str(), s, r.part.c_str(),
                   r.reference_tokens, r.live_tokens, r.attention, r.ffn, r.ranking, r.other, r.total());
    }
    const double ratio = static_cast<double>(rep.total) / static_cast<double>(vanilla);
    std::fprintf(f, "%s,%zu,total,%zu,,,,,,%llu,%.6f\n", cfg.profile.c_str(), s, refs, rep.total, ratio);
    std::printf("%s stages=%zu  MACs %.4fG  ratio %.5f\n", cfg.profile.c_str(), s, rep.total * 1e-9, ratio);
  }
  std::fclose(f);
}

struct AblateArgs {
  fs::path ckpt, data, out;
  std::size_t threads = 0;
};

void ablate_cmd(const AblateArgs& a) {
  auto [cfg, model] = load_model(a.ckpt);
  const auto sequences = load_sequences(a.data);
  const MemoryPolicy policies[] = {MemoryPolicy::kOneTemplate, MemoryPolicy::kFifo, MemoryPolicy::kScore,
                                   MemoryPolicy::kGr};
  const auto rows = run_ablation(model, sequences, policies, cfg.tracker, a.threads);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  write_ablation(a.out, rows);
  for (const auto& r : rows) {
    std::printf("%-13s AUC %.4f  P@20 %.4f  mIoU %.4f\n", policy_name(r.policy), r.auc, r.precision20, r.mean_iou);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grtrack: transformer tracker with a token-level template memory"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "write synthetic sequences");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--seqs", gen.seqs, "number of sequences")->required()->check(CLI::PositiveNumber);
  g->add_option("--len", gen.len, "frames per sequence")->required()->check(CLI::Range(2, 100000));
  g->add_option("--seed", gen.seed, "base seed (sequence i uses seed+i); default GRTRACK_SEED or 1");
  g->add_option("--drift", gen.drift, "appearance change per frame")->check(CLI::Range(0.0, 1.0));
  g->add_option("--distractors", gen.distractors, "similar-looking distractor objects");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("--config", tr.config, "JSON config")->required();
  t->add_option("--data", tr.data, "sequence root")->required();
  t->add_option("--out", tr.out, "checkpoint to write")->required();
  t->add_option("--stage", tr.stage, "1: three templates, 2: seven")->check(CLI::IsMember({1, 2}));
  t->add_option("--resume", tr.resume, "checkpoint to start from");

  TrackArgs tk;
  auto* k = app.add_subcommand("track", "track one sequence");
  k->add_option("--ckpt", tk.ckpt, "checkpoint")->required();
  k->add_option("--seq", tk.seq, "sequence directory")->required();
  k->add_option("--policy", tk.policy, "memory policy")
      ->required()
      ->check(CLI::IsMember({"one_template", "fifo", "score", "gr"}));
  k->add_option("--out", tk.out, "results CSV")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a results file");
  e->add_option("--results", ev.results, "results CSV")->required();
  e->add_option("--gt", ev.gt, "sequence directory or groundtruth.txt")->required();
  e->add_option("--out", ev.out, "metrics CSV")->required();

  BenchArgs bm;
  auto* b = app.add_subcommand("bench-macs", "analytic MAC count per relevance-stage count");
  b->add_option("--config", bm.config, "JSON config")->required();
  b->add_option("--stages", bm.stages, "only this many stages (default: all from 0)");
  b->add_option("--out", bm.out, "CSV output")->required();

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "compare memory policies");
  a->add_option("--ckpt", ab.ckpt, "checkpoint")->required();
  a->add_option("--data", ab.data, "sequence root")->required();
  a->add_option("--out", ab.out, "table CSV")->required();
  a->add_option("--threads", ab.threads, "worker threads (0 = all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) gen_data(gen);
    else if (*t) train_cmd(tr);
    else if (*k) track_cmd(tk);
    else if (*e) eval_cmd(ev);
    else if (*b) bench_macs(bm);
    else if (*a) ablate_cmd(ab);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const DataError& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
