#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dedmpc/control_loop.hpp"
#include "dedmpc/mpc.hpp"
#include "dedmpc/pid.hpp"
#include "dedmpc/process_sim.hpp"
#include "dedmpc/profile_gen.hpp"
#include "dedmpc/tide.hpp"

namespace dedmpc {

struct ProfileSettings {
  int count = 10;
  int lhs_candidates = 64;
  ProfileRanges ranges = default_profile_ranges();
};

struct PidTuneSettings {
  int budget = 12;
  GainRange range;
  /// Layers simulated per tuning episode.
  int episode_layers = 1;
};

struct RunSettings {
  ControllerKind controller = ControllerKind::mpc;
  ReferenceSpec reference;
  double warmup_u = 627.0;
  int warmup_samples = 20;
  int smoothing_span = 10;
  int max_consecutive_failures = 10;
  double transition_window = 0.2;
  bool compare_cold_start = false;
};

/// Everything a command needs, loaded from one JSON file. Missing keys keep
/// their defaults; unknown keys and bad values raise ConfigError naming the
/// dotted field path.
struct AppConfig {
  ProcessSetup setup;
  PowerBounds bounds;
  ProfileSettings profiles;
  DatasetOptions dataset;
  TideConfig model;
  TrainSchedule training;
  MpcConfig mpc;
  PidGains pid;
  PidTuneSettings pid_tune;
  RunSettings run;
  std::uint64_t seed = 0;

  void validate() const;
  /// Applies the global seed to every seeded stage.
  void apply_seed(std::uint64_t s);
  RunConfig run_config() const;
};

AppConfig config_from_json(const nlohmann::json& j);
AppConfig load_config(const std::filesystem::path& file);
nlohmann::json to_json(const AppConfig& c);

}  // namespace dedmpc
