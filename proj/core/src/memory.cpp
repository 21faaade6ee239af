#include "grtrack/memory.hpp"

#include <algorithm>
#include <numeric>

#include "grtrack/errors.hpp"
#include "grtrack/ops.hpp"

namespace grtrack {

const char* policy_name(MemoryPolicy p) {
  switch (p) {
    case MemoryPolicy::kOneTemplate: return "one_template";
    case MemoryPolicy::kFifo: return "fifo";
    case MemoryPolicy::kScore: return "score";
    case MemoryPolicy::kGr: return "gr";
  }
  return "?";
}

MemoryPolicy parse_policy(const std::string& name) {
  if (name == "one_template") return MemoryPolicy::kOneTemplate;
  if (name == "fifo") return MemoryPolicy::kFifo;
  if (name == "score") return MemoryPolicy::kScore;
  if (name == "gr") return MemoryPolicy::kGr;
  throw ConfigError("unknown memory policy '" + name + "' (expected one_template|fifo|score|gr)");
}

std::size_t UpdateSchedule::interval(std::size_t t) const {
  if (t > last_doubling_frame) return terminal_interval;
  const std::size_t doublings = t == 0 ? 0 : (t - 1) / period;
  return base_interval << doublings;
}

bool UpdateSchedule::due(std::size_t t, std::size_t last_update) const {
  return t >= last_update && t - last_update >= interval(t);
}

TokenSeq GRMemory::tokens() const { return concat_tokens(anchor, dynamic); }

GRMemory init_memory(const TokenSeq& template_tokens, std::size_t expected_tokens, std::size_t capacity) {
  template_tokens.validate();
  if (template_tokens.size() != expected_tokens) {
    throw DimensionError("init_memory: expected " + std::to_string(expected_tokens) + " template tokens, got " +
                         std::to_string(template_tokens.size()));
  }
  if (capacity == 0) capacity = 3 * expected_tokens;
  if (capacity < expected_tokens) throw ConfigError("init_memory: capacity below the template size");
  GRMemory m;
  m.anchor = detach_tokens(template_tokens);
  for (auto& p : m.anchor.provenance) p.kind = TokenKind::kAnchor;
  m.capacity = capacity;
  m.template_tokens = expected_tokens;
  return m;
}

TokenFilterParams TokenFilterParams::init(const EncoderConfig& cfg, Rng& rng) {
  TokenFilterParams p;
  for (std::size_t i = 0; i < cfg.token_filter_blocks; ++i) {
    p.blocks.push_back(BlockParams::init(cfg.dim, cfg.heads, cfg.mlp_ratio, rng));
  }
  p.mlp = RankingMlp::init(cfg.heads, cfg.ranking_hidden, rng);
  return p;
}

void TokenFilterParams::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  mlp.collect(prefix + ".rank", out);
}

RelevanceScores token_filter_scores(const TokenSeq& candidates, const TokenSeq& search,
                                    const TokenFilterParams& params) {
  if (params.blocks.empty()) throw ConfigError("token filter needs at least one block");
  if (candidates.dim() != search.dim()) throw DimensionError("token_filter: candidate and search dims differ");
  const std::size_t n = candidates.size();
  std::vector<Tensor> rows{candidates.embeddings, search.embeddings};
  Tensor x = ops::concat_rows(rows);
  for (std::size_t i = 0; i + 1 < params.blocks.size(); ++i) x = vit_block(x, params.blocks[i]);
  const auto& last = params.blocks.back();
  const Qkv qkv = project_qkv(x, last);
  auto weights = attention_weights(ops::slice_rows(qkv.q, n, search.size()), qkv.k, last.attn.heads);
  return predict_scores(pool_weights(reference_attention(weights, n, 0)), params.mlp);
}

std::vector<double> token_filter(const GRMemory& memory, const TokenSeq& new_template, const TokenSeq& search,
                                 const TokenFilterParams& params) {
  NoGradGuard guard;
  return token_filter_scores(concat_tokens(memory.tokens(), new_template), search, params).keep_scores();
}

namespace {

TokenSeq as_template(const TokenSeq& t) {
  TokenSeq out = detach_tokens(t);
  for (auto& p : out.provenance) p.kind = TokenKind::kTemplate;
  return out;
}

// Drops template slot `slot` from a dynamic block made of whole templates.
TokenSeq without_slot(const TokenSeq& dynamic, std::size_t slot, std::size_t nz) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < dynamic.size(); ++i)
    if (i / nz != slot) rows.push_back(i);
  if (rows.empty()) return TokenSeq{};
  return gather_tokens(dynamic, rows);
}

}  // namespace

GRMemory select_gr(const GRMemory& memory, const TokenSeq& new_template, std::span<const double> candidate_scores) {
  GRMemory out = memory;
  TokenSeq candidates = concat_tokens(memory.dynamic, as_template(new_template));
  if (candidate_scores.size() != candidates.size()) {
    throw DimensionError("select_gr: " + std::to_string(candidate_scores.size()) + " scores for " +
                         std::to_string(candidates.size()) + " candidates");
  }
  const std::size_t keep = memory.dynamic_capacity();
  if (candidates.size() <= keep) {
    out.dynamic = candidates;
  } else if (keep == 0) {
    out.dynamic = TokenSeq{};
  } else {
    auto rows = topk_select(candidate_scores, keep);
    out.dynamic = detach_tokens(gather_tokens(candidates, rows));
  }
  out.slot_frames.clear();
  out.slot_scores.clear();
  return out;
}

GRMemory update_memory(const GRMemory& memory, const TokenSeq& new_template, const TokenSeq& search,
                       double new_score, MemoryPolicy policy, const TokenFilterParams* filter) {
  if (policy == MemoryPolicy::kOneTemplate) return memory;
  new_template.validate();
  if (new_template.dim() != memory.anchor.dim()) {
    throw DimensionError("update_memory: template dim " + std::to_string(new_template.dim()) + " vs memory dim " +
                         std::to_string(memory.anchor.dim()));
  }
  const std::size_t nz = memory.template_tokens;
  const int frame = new_template.empty() ? 0 : new_template.provenance.front().frame_id;
  GRMemory out = memory;

  switch (policy) {
    case MemoryPolicy::kOneTemplate:
      break;
    case MemoryPolicy::kFifo:
    case MemoryPolicy::kScore: {
      if (new_template.size() != nz) throw DimensionError("update_memory: template token count differs from N_z");
      const std::size_t slots = memory.dynamic_capacity() / nz;
      if (slots == 0) return out;
      if (memory.slot_count() < slots) {
        out.dynamic = concat_tokens(memory.dynamic, as_template(new_template));
        out.slot_frames.push_back(frame);
        out.slot_scores.push_back(new_score);
        break;
      }
      std::size_t victim = 0;
      if (policy == MemoryPolicy::kScore) {
        victim = static_cast<std::size_t>(
            std::min_element(memory.slot_scores.begin(), memory.slot_scores.end()) - memory.slot_scores.begin());
        if (!(new_score > memory.slot_scores[victim])) break;
      }
      // fifo evicts slot 0 (oldest); score replaces in place to keep slot order stable
      TokenSeq rest = without_slot(memory.dynamic, victim, nz);
      out.slot_frames.erase(out.slot_frames.begin() + static_cast<std::ptrdiff_t>(victim));
      out.slot_scores.erase(out.slot_scores.begin() + static_cast<std::ptrdiff_t>(victim));
      if (policy == MemoryPolicy::kFifo) {
        out.dynamic = concat_tokens(rest, as_template(new_template));
        out.slot_frames.push_back(frame);
        out.slot_scores.push_back(new_score);
      } else {
        std::vector<std::size_t> before, after;
        for (std::size_t i = 0; i < rest.size(); ++i) (i < victim * nz ? before : after).push_back(i);
        TokenSeq head = before.empty() ? TokenSeq{} : gather_tokens(rest, before);
        TokenSeq tail = after.empty() ? TokenSeq{} : gather_tokens(rest, after);
        out.dynamic = detach_tokens(concat_tokens(concat_tokens(head, as_template(new_template)), tail));
        out.slot_frames.insert(out.slot_frames.begin() + static_cast<std::ptrdiff_t>(victim), frame);
        out.slot_scores.insert(out.slot_scores.begin() + static_cast<std::ptrdiff_t>(victim), new_score);
      }
      break;
    }
    case MemoryPolicy::kGr: {
      if (memory.size() + new_template.size() <= memory.capacity) {
        out.dynamic = concat_tokens(memory.dynamic, as_template(new_template));
        break;
      }
      if (filter == nullptr) throw ConfigError("update_memory: gr policy needs token filter parameters");
      auto scores = token_filter(memory, new_template, search, *filter);
      // rank dynamic ∪ new only; anchor rows come first
      std::span<const double> candidate(scores.data() + memory.anchor.size(), scores.size() - memory.anchor.size());
      return select_gr(memory, new_template, candidate);
    }
  }
  return out;
}

}  // namespace grtrack
