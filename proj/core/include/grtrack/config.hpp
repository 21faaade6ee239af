#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "grtrack/encoder.hpp"
#include "grtrack/tracker.hpp"

namespace grtrack {

/// Everything a run needs: model shape, memory, crops, losses, training.
struct AppConfig {
  std::string profile = "desk";
  EncoderConfig model;
  TrackerSettings tracker;
  TrainSettings train;
  TrainSettings train_stage2;  // same as train with 7 templates unless overridden
  std::uint64_t seed = 1;

  static AppConfig desk();
  static AppConfig paper();

  /// Throws ConfigError on any invalid value.
  void validate() const;
};

/// Parses JSON text. Unknown keys are rejected; missing keys fall back to the
/// preset named by "profile" (desk when absent). Throws ConfigError.
AppConfig parse_config(const std::string& json_text);
AppConfig load_config(const std::filesystem::path& file);
std::string config_to_json(const AppConfig& cfg);

/// Reads GRTRACK_SEED if set; returns `fallback` otherwise. Throws
/// ConfigError on a malformed value.
std::uint64_t seed_from_env(std::uint64_t fallback);

}  // namespace grtrack
