#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace marrprobe::wint {

struct StageConfig {
  int blocks = 2;
  int window_side = 7;
  int token_dim = 96;
  int probe_count = 0;
  bool probed = false;
};

struct WintConfig {
  int image_size = 224;
  int patch = 4;
  int mlp_ratio = 4;
  int head_dim = 32;
  std::vector<StageConfig> stages;

  // blocks 2/2/6/2, window 7, widths 96/192/384/768, probes 64/16/4/6.
  static WintConfig paper();
  // image 64, widths 32/64/128/256, blocks 2/2/2/2, windows 16/16/4/1.
  static WintConfig desk();
  // image 32, widths 16/32/64, one block per stage, one window per probed
  // stage replicated to 2 probes. Sized for exhaustive gradient checks.
  static WintConfig tiny();

  int grid_side(std::size_t stage) const;
  int windows_per_side(std::size_t stage) const { return grid_side(stage) / stages.at(stage).window_side; }
  int window_count(std::size_t stage) const { return windows_per_side(stage) * windows_per_side(stage); }
  int heads(std::size_t stage) const;
  std::vector<std::size_t> probed_stages() const;

  // Throws ConfigError on any inconsistency (indivisible sides, dims, ...).
  void validate() const;
};

nlohmann::json to_json(const WintConfig& c);
WintConfig wint_config_from_json(const nlohmann::json& j);

}  // namespace marrprobe::wint
