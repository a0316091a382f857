#include "marrprobe/wint/config.hpp"

#include "marrprobe/numerics/errors.hpp"

namespace marrprobe::wint {

WintConfig WintConfig::paper() {
  WintConfig c;
  c.image_size = 224;
  c.stages = {{2, 7, 96, 64, false}, {2, 7, 192, 16, true}, {6, 7, 384, 4, true}, {2, 7, 768, 6, true}};
  return c;
}

WintConfig WintConfig::desk() {
  WintConfig c;
  c.image_size = 64;
  c.stages = {{2, 4, 32, 16, false}, {2, 2, 64, 16, true}, {2, 2, 128, 4, true}, {2, 2, 256, 6, true}};
  return c;
}

WintConfig WintConfig::tiny() {
  WintConfig c;
  c.image_size = 32;
  c.head_dim = 16;
  c.stages = {{1, 8, 16, 2, true}, {1, 4, 32, 2, true}, {1, 2, 64, 2, true}};
  return c;
}

int WintConfig::grid_side(std::size_t stage) const {
  if (stage >= stages.size()) throw ConfigError("stage index out of range");
  return (image_size / patch) >> stage;
}

int WintConfig::heads(std::size_t stage) const { return std::max(1, stages.at(stage).token_dim / head_dim); }

std::vector<std::size_t> WintConfig::probed_stages() const {
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].probed) out.push_back(s);
  }
  return out;
}

void WintConfig::validate() const {
  if (patch <= 0 || image_size <= 0 || image_size % patch != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch " +
                      std::to_string(patch));
  }
  if (stages.empty()) throw ConfigError("at least one stage is required");
  if (mlp_ratio < 1 || head_dim < 1) throw ConfigError("mlp_ratio and head_dim must be positive");
  const int side0 = image_size / patch;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const StageConfig& st = stages[s];
    const std::string at = "stage " + std::to_string(s + 1) + ": ";
    if (s > 0 && (side0 >> (s - 1)) % 2 != 0) throw ConfigError(at + "odd grid side cannot be merged");
    const int side = grid_side(s);
    if (side < 1) throw ConfigError(at + "grid vanished");
    if (st.blocks < 0) throw ConfigError(at + "negative block count");
    if (st.window_side < 1 || side % st.window_side != 0) {
      throw ConfigError(at + "window side " + std::to_string(st.window_side) + " does not divide grid side " +
                        std::to_string(side));
    }
    if (st.token_dim < 1 || st.token_dim % heads(s) != 0) throw ConfigError(at + "token_dim not divisible by heads");
    if (s > 0 && st.token_dim != 2 * stages[s - 1].token_dim) {
      throw ConfigError(at + "patch merging doubles width; expected " + std::to_string(2 * stages[s - 1].token_dim));
    }
    if (st.probed) {
      const int windows = window_count(s);
      if (st.probe_count < 1) throw ConfigError(at + "probed stage needs probe_count >= 1");
      if (st.probe_count != windows && windows != 1) {
        throw ConfigError(at + "probe_count must equal the window count (" + std::to_string(windows) +
                          ") unless the stage has a single replicated window");
      }
    }
  }
}

nlohmann::json to_json(const WintConfig& c) {
  nlohmann::json stages = nlohmann::json::array();
  for (const StageConfig& s : c.stages) {
    stages.push_back({{"blocks", s.blocks},
                      {"window_side", s.window_side},
                      {"token_dim", s.token_dim},
                      {"probe_count", s.probe_count},
                      {"probed", s.probed}});
  }
  return {{"image_size", c.image_size},
          {"patch", c.patch},
          {"mlp_ratio", c.mlp_ratio},
          {"head_dim", c.head_dim},
          {"stages", stages}};
}

WintConfig wint_config_from_json(const nlohmann::json& j) {
  WintConfig c;
  try {
    c.image_size = j.at("image_size").get<int>();
    c.patch = j.at("patch").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    for (const auto& s : j.at("stages")) {
      c.stages.push_back({s.at("blocks").get<int>(), s.at("window_side").get<int>(), s.at("token_dim").get<int>(),
                          s.at("probe_count").get<int>(), s.at("probed").get<bool>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad encoder config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace marrprobe::wint
