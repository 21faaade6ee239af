#include "grtrack/config.hpp"

#include <cstdlib>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "grtrack/errors.hpp"

namespace grtrack {

using nlohmann::json;

AppConfig AppConfig::desk() {
  AppConfig c;
  c.profile = "desk";
  c.model = EncoderConfig::desk();
  c.tracker = TrackerSettings{};
  // a briefly trained size branch is noisy; damp it so errors do not compound through the crop
  c.tracker.size_update_rate = 0.25;
  c.train = TrainSettings{};
  // desk runs are short: raise both learning-rate tiers
  c.train.optimizer.lr_fast = 2e-3;
  c.train.optimizer.lr_slow = 5e-4;
  c.train.optimizer.grad_clip = 5.0;
  c.train.steps = 200;
  c.train.batch_size = 4;
  c.train_stage2 = c.train;
  c.train_stage2.templates = 7;
  c.train_stage2.steps = 100;
  return c;
}

AppConfig AppConfig::paper() {
  AppConfig c;
  c.profile = "paper";
  c.model = EncoderConfig::paper();
  c.tracker = TrackerSettings{};
  c.train = TrainSettings{};
  c.train.optimizer.lr_fast = 4e-4;
  c.train.optimizer.lr_slow = 4e-5;
  c.train.optimizer.weight_decay = 1e-4;
  c.train.batch_size = 32;
  c.train_stage2 = c.train;
  c.train_stage2.templates = 7;
  return c;
}

void AppConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (tracker.search_factor < 1.0 || tracker.template_factor < 1.0) fail("crop area factors must be >= 1");
  if (tracker.capacity != 0 && tracker.capacity < model.template_tokens()) fail("memory capacity below N_z");
  if (!(tracker.size_update_rate > 0.0 && tracker.size_update_rate <= 1.0)) fail("size_update_rate must be in (0, 1]");
  const auto& s = tracker.schedule;
  if (s.base_interval == 0 || s.period == 0 || s.terminal_interval == 0) fail("schedule intervals must be positive");
  for (const TrainSettings* t : {&train, &train_stage2}) {
    if (t->batch_size == 0 || t->templates == 0) fail("batch size and template count must be positive");
    if (!(t->tau_start > 0.0 && t->tau_end > 0.0)) fail("Gumbel temperatures must be positive");
    if (!(t->optimizer.lr_fast > 0.0 && t->optimizer.lr_slow > 0.0)) fail("learning rates must be positive");
    if (t->optimizer.weight_decay < 0.0) fail("weight decay must be non-negative");
  }
}

namespace {

json train_json(const TrainSettings& t) {
  return json{{"steps", t.steps},
              {"batch_size", t.batch_size},
              {"templates", t.templates},
              {"template_window_frames", t.template_window},
              {"tau_start", t.tau_start},
              {"tau_end", t.tau_end},
              {"center_jitter_rel", t.center_jitter},
              {"scale_jitter_log", t.scale_jitter},
              {"lr_fast", t.optimizer.lr_fast},
              {"lr_slow", t.optimizer.lr_slow},
              {"weight_decay", t.optimizer.weight_decay},
              {"grad_clip_norm", t.optimizer.grad_clip}};
}

// Reads known keys from `j` into fields, rejecting unknown ones.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config: '" + where_ + "' must be an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + where_ + "." + it.key() + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: bad value for '" + where_ + "." + key + "': " + e.what());
    }
  }
  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& sub(const char* key) { return j_.at(key); }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(const json& j, const std::string& where, TrainSettings& t) {
  Reader r(j, where);
  r.get("steps", t.steps);
  r.get("batch_size", t.batch_size);
  r.get("templates", t.templates);
  r.get("template_window_frames", t.template_window);
  r.get("tau_start", t.tau_start);
  r.get("tau_end", t.tau_end);
  r.get("center_jitter_rel", t.center_jitter);
  r.get("scale_jitter_log", t.scale_jitter);
  r.get("lr_fast", t.optimizer.lr_fast);
  r.get("lr_slow", t.optimizer.lr_slow);
  r.get("weight_decay", t.optimizer.weight_decay);
  r.get("grad_clip_norm", t.optimizer.grad_clip);
}

}  // namespace

std::string config_to_json(const AppConfig& c) {
  const auto& m = c.model;
  json j;
  j["profile"] = c.profile;
  j["seed"] = c.seed;
  j["model"] = {{"depth", m.depth},
                {"dim", m.dim},
                {"heads", m.heads},
                {"mlp_ratio", m.mlp_ratio},
                {"relevance_layers", m.relevance_layers},
                {"keep_ratios", m.keep_ratios},
                {"patch_size_px", m.patch_size},
                {"template_size_px", m.template_size},
                {"search_size_px", m.search_size},
                {"ranking_hidden", m.ranking_hidden},
                {"head_channels", m.head_channels},
                {"token_filter_blocks", m.token_filter_blocks}};
  const auto& s = c.tracker.schedule;
  j["memory"] = {{"capacity_tokens", c.tracker.capacity ? c.tracker.capacity : 3 * m.template_tokens()},
                 {"base_interval_frames", s.base_interval},
                 {"doubling_period_frames", s.period},
                 {"last_doubling_frame", s.last_doubling_frame},
                 {"terminal_interval_frames", s.terminal_interval}};
  j["crop"] = {{"search_area_factor", c.tracker.search_factor}, {"template_area_factor", c.tracker.template_factor}};
  j["inference"] = {{"hann_window", c.tracker.hann_window}, {"size_update_rate", c.tracker.size_update_rate}};
  const auto& w = c.train.weights;
  j["loss"] = {{"lambda_score", w.score}, {"lambda_iou", w.iou}, {"lambda_l1", w.l1}, {"lambda_ratio", w.ratio}};
  j["train_stage1"] = train_json(c.train);
  j["train_stage2"] = train_json(c.train_stage2);
  return j.dump(2);
}

AppConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }
  AppConfig c;
  {
    Reader top(j, "");
    std::string profile = "desk";
    top.get("profile", profile);
    if (profile == "desk") c = AppConfig::desk();
    else if (profile == "paper") c = AppConfig::paper();
    else throw ConfigError("config: unknown profile '" + profile + "' (desk|paper)");
    top.get("seed", c.seed);

    if (top.has("model")) {
      Reader r(top.sub("model"), "model");
      auto& m = c.model;
      r.get("depth", m.depth);
      r.get("dim", m.dim);
      r.get("heads", m.heads);
      r.get("mlp_ratio", m.mlp_ratio);
      r.get("relevance_layers", m.relevance_layers);
      r.get("keep_ratios", m.keep_ratios);
      r.get("patch_size_px", m.patch_size);
      r.get("template_size_px", m.template_size);
      r.get("search_size_px", m.search_size);
      r.get("ranking_hidden", m.ranking_hidden);
      r.get("head_channels", m.head_channels);
      r.get("token_filter_blocks", m.token_filter_blocks);
    }
    if (top.has("memory")) {
      Reader r(top.sub("memory"), "memory");
      auto& s = c.tracker.schedule;
      r.get("capacity_tokens", c.tracker.capacity);
      r.get("base_interval_frames", s.base_interval);
      r.get("doubling_period_frames", s.period);
      r.get("last_doubling_frame", s.last_doubling_frame);
      r.get("terminal_interval_frames", s.terminal_interval);
    }
    if (top.has("crop")) {
      Reader r(top.sub("crop"), "crop");
      r.get("search_area_factor", c.tracker.search_factor);
      r.get("template_area_factor", c.tracker.template_factor);
    }
    if (top.has("inference")) {
      Reader r(top.sub("inference"), "inference");
      r.get("hann_window", c.tracker.hann_window);
      r.get("size_update_rate", c.tracker.size_update_rate);
    }
    LossWeights w = c.train.weights;
    if (top.has("loss")) {
      Reader r(top.sub("loss"), "loss");
      r.get("lambda_score", w.score);
      r.get("lambda_iou", w.iou);
      r.get("lambda_l1", w.l1);
      r.get("lambda_ratio", w.ratio);
    }
    if (top.has("train_stage1")) read_train(top.sub("train_stage1"), "train_stage1", c.train);
    if (top.has("train_stage2")) read_train(top.sub("train_stage2"), "train_stage2", c.train_stage2);
    for (TrainSettings* t : {&c.train, &c.train_stage2}) {
      t->weights = w;
      t->search_factor = c.tracker.search_factor;
      t->template_factor = c.tracker.template_factor;
      t->capacity = c.tracker.capacity;
      t->seed = c.seed;
    }
  }
  c.validate();
  return c;
}

AppConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::uint64_t seed_from_env(std::uint64_t fallback) {
  const char* v = std::getenv("GRTRACK_SEED");
  if (v == nullptr || *v == '\0') return fallback;
  try {
    std::size_t used = 0;
    const auto s = std::stoull(v, &used);
    if (used != std::string(v).size()) throw std::invalid_argument("trailing characters");
    return s;
  } catch (const std::exception&) {
    throw ConfigError(std::string("GRTRACK_SEED is not an unsigned integer: '") + v + "'");
  }
}

}  // namespace grtrack
