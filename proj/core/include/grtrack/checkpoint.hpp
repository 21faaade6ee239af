#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grtrack/memory.hpp"
#include "grtrack/model.hpp"
#include "grtrack/optim.hpp"

namespace grtrack {

/// On disk: magic "GRTRCKPT", u32 format version, u32 config length +
/// config JSON, u32 entry count, manifest (name, dtype, rank, dims), then
/// the little-endian float32 payloads in manifest order.
inline constexpr char kCheckpointMagic[8] = {'G', 'R', 'T', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  void put(std::string name, const Tensor& t);
  void put(std::string name, Shape shape, std::span<const double> values);
};

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
/// Throws DataError on a bad magic, unknown version or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& file);

/// Model parameters under "model.<name>", optimizer moments under
/// "optim.m.<name>" / "optim.v.<name>" and the step count "optim.step".
Checkpoint make_checkpoint(const TrackerModel& model, const AdamW* optimizer, const std::string& config_json);
/// Overwrites every model parameter; throws DataError if one is missing or
/// has the wrong shape.
void restore_model(TrackerModel& model, const Checkpoint& ckpt);
/// False when the checkpoint carries no optimizer state.
bool restore_optimizer(AdamW& optimizer, const Checkpoint& ckpt);

/// Memory tokens plus a provenance table under "<prefix>.*".
void put_memory(Checkpoint& ckpt, const std::string& prefix, const GRMemory& memory);
GRMemory get_memory(const Checkpoint& ckpt, const std::string& prefix);

}  // namespace grtrack
