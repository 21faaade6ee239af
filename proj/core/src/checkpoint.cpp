#include "grtrack/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "grtrack/errors.hpp"

namespace grtrack {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void Checkpoint::put(std::string name, Shape shape, std::span<const double> values) {
  CheckpointEntry e{std::move(name), std::move(shape), {}};
  e.data.reserve(values.size());
  for (double v : values) e.data.push_back(static_cast<float>(v));
  entries.push_back(std::move(e));
}

void Checkpoint::put(std::string name, const Tensor& t) { put(std::move(name), t.shape(), t.data()); }

namespace {

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_str(std::ofstream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Input {
 public:
  Input(const std::filesystem::path& file) : in_(file, std::ios::binary), name_(file.string()) {
    if (!in_) throw DataError("cannot open checkpoint " + name_);
  }
  template <class T>
  T pod() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t limit = 1u << 26) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) throw DataError(name_ + ": corrupt string length");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) throw DataError(name_ + ": truncated checkpoint");
  }

 private:
  std::ifstream in_;
  std::string name_;
};

constexpr std::uint8_t kFloat32 = 1;

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + file.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  write_pod<std::uint32_t>(out, ckpt.version);
  write_str(out, ckpt.config_json);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    write_str(out, e.name);
    write_pod<std::uint8_t>(out, kFloat32);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) write_pod<std::uint64_t>(out, d);
  }
  for (const auto& e : ckpt.entries) {
    out.write(reinterpret_cast<const char*>(e.data.data()), static_cast<std::streamsize>(e.data.size() * sizeof(float)));
  }
  if (!out) throw DataError("write failed: " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  Input in(file);
  char magic[sizeof kCheckpointMagic];
  in.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError(file.string() + ": not a checkpoint");
  Checkpoint ckpt;
  ckpt.version = in.pod<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw DataError(file.string() + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.config_json = in.str();
  const auto n = in.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    CheckpointEntry e;
    e.name = in.str(4096);
    if (in.pod<std::uint8_t>() != kFloat32) throw DataError(file.string() + ": unknown dtype for " + e.name);
    const auto rank = in.pod<std::uint32_t>();
    if (rank > 8) throw DataError(file.string() + ": corrupt rank for " + e.name);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<std::size_t>(in.pod<std::uint64_t>()));
    ckpt.entries.push_back(std::move(e));
  }
  for (auto& e : ckpt.entries) {
    const std::size_t count = shape_numel(e.shape);
    if (count > (std::size_t{1} << 32)) throw DataError(file.string() + ": corrupt size for " + e.name);
    e.data.resize(count);
    in.bytes(e.data.data(), count * sizeof(float));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const TrackerModel& model, const AdamW* optimizer, const std::string& config_json) {
  Checkpoint ckpt;
  ckpt.config_json = config_json;
  for (const auto& p : model.parameters()) ckpt.put("model." + p.name, p.tensor);
  if (optimizer != nullptr) {
    const AdamW& opt = *optimizer;
    const auto& params = opt.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.put("optim.m." + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]);
      ckpt.put("optim.v." + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]);
    }
    const double step = static_cast<double>(opt.steps());
    ckpt.put("optim.step", {1}, std::span<const double>(&step, 1));
  }
  return ckpt;
}

namespace {

const CheckpointEntry& require(const Checkpoint& ckpt, const std::string& name, const Shape& shape) {
  const auto* e = ckpt.find(name);
  if (e == nullptr) throw DataError("checkpoint lacks '" + name + "'");
  if (e->shape != shape) {
    throw DataError("checkpoint entry '" + name + "' has shape " + shape_str(e->shape) + ", expected " +
                    shape_str(shape));
  }
  return *e;
}

}  // namespace

void restore_model(TrackerModel& model, const Checkpoint& ckpt) {
  for (auto& p : model.parameters()) {
    const auto& e = require(ckpt, "model." + p.name, p.tensor.shape());
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(e.data[i]);
  }
}

bool restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt) {
  const auto* step = ckpt.find("optim.step");
  if (step == nullptr) return false;
  const auto& params = optimizer.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = require(ckpt, "optim.m." + params[i].name, params[i].tensor.shape());
    const auto& v = require(ckpt, "optim.v." + params[i].name, params[i].tensor.shape());
    optimizer.first_moments()[i].assign(m.data.begin(), m.data.end());
    optimizer.second_moments()[i].assign(v.data.begin(), v.data.end());
  }
  optimizer.set_steps(static_cast<std::uint64_t>(step->data.at(0)));
  return true;
}

namespace {

void put_tokens(Checkpoint& ckpt, const std::string& prefix, const TokenSeq& seq) {
  const std::size_t n = seq.size();
  if (n > 0) ckpt.put(prefix + ".embeddings", seq.embeddings);
  std::vector<double> prov;
  for (const auto& p : seq.provenance) {
    prov.push_back(p.frame_id);
    prov.push_back(p.spatial_index);
    prov.push_back(static_cast<double>(p.kind));
  }
  ckpt.put(prefix + ".provenance", {n, 3}, prov);
}

TokenSeq get_tokens(const Checkpoint& ckpt, const std::string& prefix) {
  const auto* prov = ckpt.find(prefix + ".provenance");
  if (prov == nullptr || prov->shape.size() != 2) throw DataError("checkpoint lacks '" + prefix + ".provenance'");
  const std::size_t n = prov->shape[0];
  TokenSeq seq;
  for (std::size_t i = 0; i < n; ++i) {
    seq.provenance.push_back({static_cast<int>(prov->data[3 * i]), static_cast<int>(prov->data[3 * i + 1]),
                              static_cast<TokenKind>(static_cast<int>(prov->data[3 * i + 2]))});
  }
  if (n > 0) {
    const auto* emb = ckpt.find(prefix + ".embeddings");
    if (emb == nullptr || emb->shape.size() != 2 || emb->shape[0] != n) {
      throw DataError("checkpoint entry '" + prefix + ".embeddings' missing or inconsistent");
    }
    seq.embeddings = Tensor(emb->shape, std::vector<double>(emb->data.begin(), emb->data.end()));
  }
  return seq;
}

}  // namespace

void put_memory(Checkpoint& ckpt, const std::string& prefix, const GRMemory& memory) {
  put_tokens(ckpt, prefix + ".anchor", memory.anchor);
  put_tokens(ckpt, prefix + ".dynamic", memory.dynamic);
  const double meta[2] = {static_cast<double>(memory.capacity), static_cast<double>(memory.template_tokens)};
  ckpt.put(prefix + ".meta", {2}, meta);
  std::vector<double> slots;
  for (std::size_t i = 0; i < memory.slot_frames.size(); ++i) {
    slots.push_back(memory.slot_frames[i]);
    slots.push_back(memory.slot_scores[i]);
  }
  ckpt.put(prefix + ".slots", {memory.slot_frames.size(), 2}, slots);
}

GRMemory get_memory(const Checkpoint& ckpt, const std::string& prefix) {
  GRMemory m;
  m.anchor = get_tokens(ckpt, prefix + ".anchor");
  m.dynamic = get_tokens(ckpt, prefix + ".dynamic");
  const auto* meta = ckpt.find(prefix + ".meta");
  const auto* slots = ckpt.find(prefix + ".slots");
  if (meta == nullptr || slots == nullptr) throw DataError("checkpoint lacks memory metadata under " + prefix);
  m.capacity = static_cast<std::size_t>(meta->data.at(0));
  m.template_tokens = static_cast<std::size_t>(meta->data.at(1));
  for (std::size_t i = 0; i < slots->shape.at(0); ++i) {
    m.slot_frames.push_back(static_cast<int>(slots->data[2 * i]));
    m.slot_scores.push_back(slots->data[2 * i + 1]);
  }
  return m;
}

}  // namespace grtrack
