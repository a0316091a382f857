#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "marrprobe/numerics/layers.hpp"

namespace marrprobe::probes {

using numerics::Tensor;

// Forward selection used by template_activate. `hard` is the hardmax of the
// model; `relaxed` replaces the one-hot by the row softmax in the forward pass
// too, which makes the (shared) backward rule an exact derivative and is what
// gradient checks run against.
enum class TemplateMode { hard, relaxed };

struct TemplateBank {
  Tensor weight;  // [D, K]
  static TemplateBank create(numerics::ParamSet& params, const std::string& name, int dim, int k, numerics::Rng& rng);
  int dim() const { return weight.dim(0); }
  int count() const { return weight.dim(1); }
};

struct TemplateActivation {
  Tensor theta;               // [K, D]; theta[k] = p_k * onehot[:, k]
  std::vector<int> assigned;  // winning template per feature dimension
};

// tokens: [K, D]. A[d,k] = tokens[k,d] * W[d,k]; each row of A is replaced by
// its argmax one-hot (ties -> lowest k). Backward: gradient of the softmax(A/tau)
// relaxation of the forward.
TemplateActivation template_activate(const Tensor& tokens, const Tensor& weight, TemplateMode mode = TemplateMode::hard,
                                     double tau = 1.0);

// [1, D] -> [K, D] identical rows.
Tensor replicate_high(const Tensor& token, int k);

// Contiguous split of theta into geometry, albedo, view and light segments.
struct Segments {
  int geometry = 0, albedo = 0, view = 0, light = 0;
  static Segments for_dim(int d);  // 3/8, 3/8, 1/8, 1/8
  int total() const { return geometry + albedo + view + light; }
};

struct DecoderConfig {
  int resolution = 64;
  // Width of the 4x4 seed followed by one width per upsampling stage;
  // log2(resolution / 4) + 1 entries.
  std::vector<int> channels = {16, 16, 8, 8, 4};
  int mlp_hidden = 32;
  double depth_min = 0.9;
  double depth_max = 1.1;
  // Std of the depth and albedo head convolutions; 0 gives zero heads.
  double depth_head_std = 0.05;
  double albedo_head_std = 0.05;
  // Std of the view/light output layers. 0 starts every probe at the frontal
  // view with k_a = k_d = 0.5 and overhead light, where flat depth gets no
  // first-order gradient from yaw or light direction.
  double pose_head_std = 0.1;

  void validate() const;
};

nlohmann::json to_json(const DecoderConfig& c);
DecoderConfig decoder_config_from_json(const nlohmann::json& j);

// Ranges of the bounded view heads.
struct ViewRanges {
  static constexpr double pitch = 0.7853981633974483;  // pi/4
  static constexpr double yaw = 1.5707963267948966;    // pi/2
  static constexpr double roll = 0.7853981633974483;
  static constexpr double translation = 0.2;
};

// Decoded probes of one level, batched over K.
struct ProbeBatch {
  Tensor depth;   // [K, R, R]
  Tensor albedo;  // [K, R, R, 3]
  Tensor view;    // [K, 6] pitch, yaw, roll, tx, ty, tz
  Tensor light;   // [K, 4] k_a, k_d, l_x, l_y
  int count() const { return depth.dim(0); }
  int resolution() const { return depth.dim(1); }
};

class StageDecoders {
 public:
  StageDecoders() = default;
  StageDecoders(numerics::ParamSet& params, const std::string& name, int token_dim, const DecoderConfig& config,
                numerics::Rng& rng);

  // theta: [K, D].
  ProbeBatch decode(const Tensor& theta) const;

  const Segments& segments() const noexcept { return segments_; }
  const DecoderConfig& config() const noexcept { return config_; }

 private:
  struct ImageDecoder {
    numerics::Linear seed;
    std::vector<numerics::Conv3x3> convs;
    numerics::Conv3x3 head;
  };
  struct Mlp {
    numerics::Linear hidden, out;
  };

  ImageDecoder make_image_decoder(numerics::ParamSet& params, const std::string& name, int in, int out_channels,
                                  double head_std, numerics::Rng& rng) const;
  Tensor run_image_decoder(const ImageDecoder& dec, const Tensor& x) const;

  DecoderConfig config_;
  Segments segments_;
  ImageDecoder depth_, albedo_;
  Mlp view_, light_;
};

}  // namespace marrprobe::probes
