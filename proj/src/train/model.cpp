#include "marrprobe/train/model.hpp"

#include <cmath>

#include "marrprobe/numerics/ops.hpp"

namespace marrprobe::train {

using namespace numerics;

ConfidenceNet::ConfidenceNet(ParamSet& params, const std::string& name, int resolution, int width, Rng& rng)
    : resolution_(resolution) {
  if (resolution % 16 != 0) throw ConfigError("confidence net needs a resolution divisible by 16");
  const int widths[5] = {3, width, 2 * width, 4 * width, 4 * width};
  for (int i = 0; i < 4; ++i) {
    down_.push_back(Conv3x3::create(params, name + ".down" + std::to_string(i), widths[i], widths[i + 1], rng, 2));
  }
  for (int i = 4; i > 1; --i) {
    up_.push_back(Conv3x3::create(params, name + ".up" + std::to_string(4 - i), widths[i], widths[i - 1], rng));
  }
  up_.push_back(Conv3x3::create(params, name + ".up3", widths[1], widths[1], rng));
  head_ = Conv3x3::create(params, name + ".head", widths[1], 1, rng, 1, 0.1);
}

Tensor ConfidenceNet::operator()(const Tensor& image) const {
  const int r = image.dim(0);
  if (r != resolution_ || image.shape() != Shape{r, r, 3}) {
    throw DimensionError("confidence net expects [" + std::to_string(resolution_) + "," + std::to_string(resolution_) +
                         ",3], got " + shape_str(image.shape()));
  }
  Tensor x = add_scalar(reshape(permute(image, {2, 0, 1}), {1, 3, r, r}), -0.5);
  for (const auto& c : down_) x = relu(c(x));
  for (const auto& c : up_) x = relu(c(upsample_nearest2x(x)));
  return add_scalar(softplus(reshape(head_(x), {r, r})), kSigmaMin);
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.encoder = wint::WintConfig::tiny();
  c.decoder.resolution = 16;
  c.decoder.channels = {8, 8, 4};
  c.decoder.mlp_hidden = 16;
  c.confidence_width = 4;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.encoder = wint::WintConfig::paper();
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "tiny") return tiny();
  if (name == "paper") return paper();
  throw ConfigError("unknown model preset '" + name + "' (expected desk, tiny or paper)");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.image_size % decoder.resolution != 0) {
    throw ConfigError("image size " + std::to_string(encoder.image_size) + " is not a multiple of the decoder resolution " +
                      std::to_string(decoder.resolution));
  }
  if (decoder.resolution % 16 != 0) throw ConfigError("decoder resolution must be a multiple of 16");
  if (confidence_width < 1) throw ConfigError("confidence width must be positive");
  if (!(initial_sigma > kSigmaMin)) throw ConfigError("initial sigma must exceed the floor");
  if (encoder.probed_stages().empty()) throw ConfigError("model has no probed stage");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"encoder", wint::to_json(c.encoder)},
          {"decoder", probes::to_json(c.decoder)},
          {"confidence_width", c.confidence_width},
          {"initial_sigma", c.initial_sigma}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.encoder = wint::wint_config_from_json(j.at("encoder"));
    c.decoder = probes::decoder_config_from_json(j.at("decoder"));
    c.confidence_width = j.at("confidence_width").get<int>();
    c.initial_sigma = j.at("initial_sigma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::string> level_names(std::size_t count) {
  if (count == 3) return {"low", "mid", "high"};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back("level" + std::to_string(i));
  return out;
}

Tensor area_downsample(const Tensor& image, int resolution) {
  const int s = image.dim(0);
  if (image.rank() != 3 || image.dim(1) != s || image.dim(2) != 3 || resolution <= 0 || s % resolution != 0) {
    throw DimensionError("area_downsample: cannot take " + shape_str(image.shape()) + " to " +
                         std::to_string(resolution));
  }
  if (s == resolution) return image.detach();
  const int f = s / resolution;
  Tensor out = Tensor::zeros({resolution, resolution, 3}, image.dtype());
  dispatch(image.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto in = image.data<T>();
    auto o = out.mutable_data<T>();
    const double norm = 1.0 / (f * f);
    for (int i = 0; i < resolution; ++i)
      for (int j = 0; j < resolution; ++j)
        for (int c = 0; c < 3; ++c) {
          double acc = 0;
          for (int a = 0; a < f; ++a)
            for (int b = 0; b < f; ++b) acc += in[((i * f + a) * s + (j * f + b)) * 3 + c];
          o[(i * resolution + j) * 3 + c] = static_cast<T>(acc * norm);
        }
  });
  return out;
}

namespace {

wint::Encoder make_encoder(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(Rng::derive(seed, 0));
  return wint::Encoder(config.encoder, rng);
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config), encoder_(make_encoder(config, seed)) {
  params_.append("encoder.", encoder_.params());
  const auto stages = config_.encoder.probed_stages();
  const auto names = level_names(stages.size());
  for (std::size_t l = 0; l < stages.size(); ++l) {
    Rng rng(Rng::derive(seed, 1 + l));
    Level lv;
    lv.name = names[l];
    lv.stage = stages[l];
    const auto& sc = config_.encoder.stages[stages[l]];
    lv.probes = sc.probe_count;
    lv.templates = probes::TemplateBank::create(params_, lv.name + ".templates", sc.token_dim, sc.probe_count, rng);
    lv.decoders = probes::StageDecoders(params_, lv.name + ".decoder", sc.token_dim, config_.decoder, rng);
    levels_.push_back(std::move(lv));
  }
  Rng rng(Rng::derive(seed, 100));
  confidence_ = ConfidenceNet(params_, "confidence", config_.decoder.resolution, config_.confidence_width, rng);
  // softplus(b) + floor = initial_sigma.
  Tensor head_bias = params_.get("confidence.head.bias");
  head_bias.set(0, std::log(std::expm1(config_.initial_sigma - kSigmaMin)));
}

render::Camera Model::camera() const {
  render::Camera cam;
  cam.resolution = config_.decoder.resolution;
  return cam;
}

std::vector<Tensor> Model::group(const std::string& prefix) const {
  std::vector<Tensor> out;
  for (const auto& e : params_.entries())
    if (e.name.rfind(prefix, 0) == 0) out.push_back(e.tensor);
  return out;
}

ForwardResult Model::forward(const Tensor& image, const std::vector<double>& weights, probes::TemplateMode mode,
                             double tau) const {
  const int s = config_.encoder.image_size;
  if (image.shape() != Shape{s, s, 3}) {
    throw DimensionError("model expects [" + std::to_string(s) + "," + std::to_string(s) + ",3], got " +
                         shape_str(image.shape()));
  }
  if (!weights.empty() && weights.size() != levels_.size()) {
    throw ConfigError("expected " + std::to_string(levels_.size()) + " level weights, got " +
                      std::to_string(weights.size()));
  }
  ForwardResult out;
  out.target = area_downsample(image, config_.decoder.resolution);
  out.sigma = confidence_(out.target);
  const wint::EncodeResult enc = encoder_.encode(image);
  const render::Camera cam = camera();
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    if (!weights.empty() && weights[l] == 0.0) continue;
    const Level& lv = levels_[l];
    Tensor tokens = enc.probes.at(l);
    if (tokens.dim(0) == 1 && lv.probes > 1) tokens = probes::replicate_high(tokens, lv.probes);
    LevelOutput o;
    o.name = lv.name;
    o.activation = probes::template_activate(tokens, lv.templates.weight, mode, tau);
    o.probes = lv.decoders.decode(o.activation.theta);
    o.scene = render::assemble(o.probes);
    o.render = render::render(o.scene, cam);
    out.levels.push_back(std::move(o));
  }
  return out;
}

LossResult Model::loss(const Tensor& image, const LossOptions& options) const {
  const std::vector<double>& w = options.level_weights;
  if (!w.empty()) {
    bool any = false;
    for (double x : w) {
      if (!(x >= 0.0)) throw ConfigError("level weights must be non-negative");
      any = any || x > 0.0;
    }
    if (!any) throw ConfigError("at least one level weight must be positive");
  }
  LossResult r;
  r.forward = forward(image, w, options.template_mode, options.tau);
  std::size_t li = 0;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    if (!w.empty() && w[l] == 0.0) continue;
    const LevelOutput& o = r.forward.levels[li++];
    Tensor t = reconstruction_loss(r.forward.target, o.render.image, o.render.flipped, r.forward.sigma,
                                   options.coverage, o.render.coverage, o.render.flipped_coverage);
    Tensor weighted = w.empty() || w[l] == 1.0 ? t : scale(t, w[l]);
    r.total = r.total.defined() ? add(r.total, weighted) : weighted;
    r.names.push_back(o.name);
    r.terms.push_back(t);
  }
  return r;
}

}  // namespace marrprobe::train
