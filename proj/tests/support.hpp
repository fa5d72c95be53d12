#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dedmpc/config.hpp"

namespace testing {

inline std::filesystem::path source_dir() { return DEDMPC_SOURCE_DIR; }

inline dedmpc::AppConfig desk_config() { return dedmpc::load_config(source_dir() / "configs" / "desk.json"); }

/// One-layer 4 mm square on the desk mesh and material; a run takes well under a second.
inline dedmpc::ProcessSetup tiny_setup() {
  dedmpc::ProcessSetup s = desk_config().setup;
  s.path.side_length = 4.0;
  s.path.num_layers = 1;
  return s;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dedmpc_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

}  // namespace testing
