#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "marrprobe/numerics/layers.hpp"
#include "marrprobe/probes/probes.hpp"
#include "marrprobe/render/render.hpp"
#include "marrprobe/train/loss.hpp"
#include "marrprobe/wint/encoder.hpp"

namespace marrprobe::train {

using numerics::ParamSet;

// Strided encoder 3 -> w -> 2w -> 4w -> 4w followed by the mirrored
// upsampling decoder and a softplus head with the kSigmaMin floor.
class ConfidenceNet {
 public:
  ConfidenceNet() = default;
  ConfidenceNet(ParamSet& params, const std::string& name, int resolution, int width, numerics::Rng& rng);
  // image [R, R, 3] -> sigma [R, R].
  Tensor operator()(const Tensor& image) const;

 private:
  std::vector<numerics::Conv3x3> down_, up_;
  numerics::Conv3x3 head_;
  int resolution_ = 0;
};

struct ModelConfig {
  wint::WintConfig encoder = wint::WintConfig::desk();
  probes::DecoderConfig decoder;
  int confidence_width = 8;
  double initial_sigma = 0.2;

  // Encoder desk preset with 64 x 64 decoders.
  static ModelConfig desk();
  // 32 x 32 input, 16 x 16 decoders; sized for exhaustive gradient checks.
  static ModelConfig tiny();
  static ModelConfig paper();
  static ModelConfig preset(const std::string& name);
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// "low", "mid", "high" for three probed stages, "level<i>" otherwise.
std::vector<std::string> level_names(std::size_t count);

struct LevelOutput {
  std::string name;
  probes::TemplateActivation activation;
  probes::ProbeBatch probes;
  render::SceneAssembly scene;
  render::RenderResult render;
};

struct ForwardResult {
  Tensor target;  // input downsampled to R
  Tensor sigma;
  std::vector<LevelOutput> levels;  // only evaluated levels, in level order
};

struct LossResult {
  Tensor total;
  std::vector<std::string> names;  // levels with a positive weight
  std::vector<Tensor> terms;       // unweighted reconstruction term per entry of names
  ForwardResult forward;
};

struct LossOptions {
  std::vector<double> level_weights;  // empty = all 1
  CoverageMode coverage = CoverageMode::penalize;
  probes::TemplateMode template_mode = probes::TemplateMode::hard;
  double tau = 1.0;
};

// [S, S, 3] -> [R, R, 3] by averaging factor x factor blocks. Not taped.
Tensor area_downsample(const Tensor& image, int resolution);

class Model {
 public:
  struct Level {
    std::string name;
    std::size_t stage = 0;
    int probes = 0;
    probes::TemplateBank templates;
    probes::StageDecoders decoders;
  };

  Model(const ModelConfig& config, std::uint64_t seed);

  // Levels with weight 0 (when `weights` is given) are skipped entirely.
  ForwardResult forward(const Tensor& image, const std::vector<double>& weights = {},
                        probes::TemplateMode mode = probes::TemplateMode::hard, double tau = 1.0) const;
  LossResult loss(const Tensor& image, const LossOptions& options = {}) const;

  const ModelConfig& config() const noexcept { return config_; }
  const ParamSet& params() const noexcept { return params_; }
  ParamSet& params() noexcept { return params_; }
  const std::vector<Level>& levels() const noexcept { return levels_; }
  const wint::Encoder& encoder() const noexcept { return encoder_; }
  render::Camera camera() const;

  // Parameter groups for per-class gradient checks.
  std::vector<numerics::Tensor> group(const std::string& prefix) const;

 private:
  ModelConfig config_;
  wint::Encoder encoder_;
  ParamSet params_;
  std::vector<Level> levels_;
  ConfidenceNet confidence_;
};

}  // namespace marrprobe::train
