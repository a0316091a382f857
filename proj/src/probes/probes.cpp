#include "marrprobe/probes/probes.hpp"

#include <cmath>

#include "marrprobe/numerics/tape.hpp"

namespace marrprobe::probes {

using namespace numerics;

TemplateBank TemplateBank::create(ParamSet& params, const std::string& name, int dim, int k, Rng& rng) {
  return {params.add(name, randn({dim, k}, rng, 1.0))};
}

TemplateActivation template_activate(const Tensor& tokens, const Tensor& weight, TemplateMode mode, double tau) {
  if (tokens.rank() != 2 || weight.rank() != 2 || tokens.dim(1) != weight.dim(0)) {
    throw DimensionError("template_activate: tokens " + shape_str(tokens.shape()) + ", templates " +
                         shape_str(weight.shape()));
  }
  if (tokens.dim(0) != weight.dim(1)) {
    throw ContractError("template_activate: " + std::to_string(tokens.dim(0)) + " tokens for " +
                        std::to_string(weight.dim(1)) + " templates");
  }
  if (tokens.dtype() != weight.dtype()) throw ContractError("template_activate: mixed dtypes");
  if (tau <= 0) throw ContractError("template_activate: tau must be positive");
  const int k = tokens.dim(0), d = tokens.dim(1);
  TemplateActivation out;
  out.assigned.assign(static_cast<std::size_t>(d), 0);
  out.theta = Tensor::zeros({k, d}, tokens.dtype());
  // Row softmax of A / tau, [D, K], kept for backward.
  Tensor soft = Tensor::zeros({d, k}, tokens.dtype());
  dispatch(tokens.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto p = tokens.data<T>();
    auto w = weight.data<T>();
    auto s = soft.mutable_data<T>();
    auto th = out.theta.mutable_data<T>();
    std::vector<T> a(static_cast<std::size_t>(k));
    for (int j = 0; j < d; ++j) {
      int best = 0;
      for (int i = 0; i < k; ++i) {
        a[i] = p[i * d + j] * w[j * k + i];
        if (a[i] > a[best]) best = i;
      }
      out.assigned[j] = best;
      T total = 0;
      for (int i = 0; i < k; ++i) {
        s[j * k + i] = std::exp((a[i] - a[best]) / static_cast<T>(tau));
        total += s[j * k + i];
      }
      for (int i = 0; i < k; ++i) s[j * k + i] /= total;
      for (int i = 0; i < k; ++i) {
        const T sel = mode == TemplateMode::hard ? T(i == best ? 1 : 0) : s[j * k + i];
        th[i * d + j] = p[i * d + j] * sel;
      }
    }
  });
  if (mode == TemplateMode::hard && decisions::enabled()) {
    for (int j = 0; j < d; ++j) decisions::note(static_cast<std::uint64_t>(out.assigned[j]));
  }
  if (!should_record({&tokens, &weight})) return out;
  record("template_activate", {tokens, weight}, out.theta, [tokens, weight, theta = out.theta, soft, k, d, tau]() {
    dispatch(theta.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = theta.grad_span<T>();
      auto p = tokens.data<T>();
      auto w = weight.data<T>();
      auto s = soft.data<T>();
      std::span<T> gp, gw;
      if (tokens.requires_grad()) gp = tokens.grad_span<T>();
      if (weight.requires_grad()) gw = weight.grad_span<T>();
      std::vector<T> u(static_cast<std::size_t>(k));
      for (int j = 0; j < d; ++j) {
        T us = 0;
        for (int i = 0; i < k; ++i) {
          u[i] = g[i * d + j] * p[i * d + j];
          us += u[i] * s[j * k + i];
        }
        for (int i = 0; i < k; ++i) {
          const T sij = s[j * k + i];
          const T ga = sij * (u[i] - us) / static_cast<T>(tau);
          if (!gp.empty()) gp[i * d + j] += sij * g[i * d + j] + ga * w[j * k + i];
          if (!gw.empty()) gw[j * k + i] += ga * p[i * d + j];
        }
      }
    });
  });
  return out;
}

Tensor replicate_high(const Tensor& token, int k) {
  if (token.rank() != 2 || token.dim(0) != 1) {
    throw ContractError("replicate_high expects one token [1, D], got " + shape_str(token.shape()));
  }
  if (k < 1) throw ContractError("replicate_high: K must be >= 1");
  return index_select(token, std::vector<int>(static_cast<std::size_t>(k), 0));
}

Segments Segments::for_dim(int d) {
  if (d < 8 || d % 8 != 0) throw ConfigError("token width " + std::to_string(d) + " is not a multiple of 8");
  return {3 * d / 8, 3 * d / 8, d / 8, d / 8};
}

void DecoderConfig::validate() const {
  if (resolution < 4 || (resolution & (resolution - 1)) != 0) {
    throw ConfigError("decoder resolution must be a power of two >= 4");
  }
  const int stages = static_cast<int>(std::lround(std::log2(resolution / 4)));
  if (static_cast<int>(channels.size()) != stages + 1) {
    throw ConfigError("decoder needs " + std::to_string(stages + 1) + " channel widths for resolution " +
                      std::to_string(resolution));
  }
  for (int c : channels) {
    if (c < 1) throw ConfigError("decoder channel width must be positive");
  }
  if (!(depth_min < depth_max)) throw ConfigError("depth_min must be below depth_max");
  if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
  if (depth_head_std < 0 || albedo_head_std < 0 || pose_head_std < 0) throw ConfigError("head std must be non-negative");
}

nlohmann::json to_json(const DecoderConfig& c) {
  return {{"resolution", c.resolution},   {"channels", c.channels},         {"mlp_hidden", c.mlp_hidden},
          {"depth_min", c.depth_min},     {"depth_max", c.depth_max},       {"depth_head_std", c.depth_head_std},
          {"albedo_head_std", c.albedo_head_std}, {"pose_head_std", c.pose_head_std}};
}

DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  try {
    c.resolution = j.at("resolution").get<int>();
    c.channels = j.at("channels").get<std::vector<int>>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.depth_min = j.at("depth_min").get<double>();
    c.depth_max = j.at("depth_max").get<double>();
    c.depth_head_std = j.at("depth_head_std").get<double>();
    c.albedo_head_std = j.at("albedo_head_std").get<double>();
    c.pose_head_std = j.at("pose_head_std").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad decoder config: ") + e.what());
  }
  c.validate();
  return c;
}

StageDecoders::StageDecoders(ParamSet& params, const std::string& name, int token_dim, const DecoderConfig& config,
                             Rng& rng)
    : config_(config), segments_(Segments::for_dim(token_dim)) {
  config_.validate();
  depth_ = make_image_decoder(params, name + ".depth", segments_.geometry, 1, config_.depth_head_std, rng);
  albedo_ = make_image_decoder(params, name + ".albedo", segments_.albedo, 3, config_.albedo_head_std, rng);
  auto mlp = [&](const std::string& n, int in, int out) {
    Mlp m;
    m.hidden = Linear::create(params, n + ".hidden", in, config_.mlp_hidden, rng, 1.0 / std::sqrt(in));
    m.out = Linear::create(params, n + ".out", config_.mlp_hidden, out, rng, config_.pose_head_std);
    return m;
  };
  view_ = mlp(name + ".view", segments_.view, 6);
  light_ = mlp(name + ".light", segments_.light, 4);
}

StageDecoders::ImageDecoder StageDecoders::make_image_decoder(ParamSet& params, const std::string& name, int in,
                                                              int out_channels, double head_std, Rng& rng) const {
  ImageDecoder dec;
  const auto& ch = config_.channels;
  dec.seed = Linear::create(params, name + ".seed", in, ch[0] * 16, rng, 1.0 / std::sqrt(in));
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) {
    dec.convs.push_back(Conv3x3::create(params, name + ".conv" + std::to_string(i + 1), ch[i], ch[i + 1], rng));
  }
  dec.head = Conv3x3::create(params, name + ".head", ch.back(), out_channels, rng);
  for (std::size_t i = 0; i < dec.head.weight.numel(); ++i) {
    dec.head.weight.set(i, head_std * rng.normal());
  }
  return dec;
}

Tensor StageDecoders::run_image_decoder(const ImageDecoder& dec, const Tensor& x) const {
  const int k = x.dim(0);
  Tensor h = relu(reshape(dec.seed(x), {k, config_.channels[0], 4, 4}));
  for (const Conv3x3& c : dec.convs) h = relu(c(upsample_nearest2x(h)));
  return tanh(dec.head(h));
}

ProbeBatch StageDecoders::decode(const Tensor& theta) const {
  if (theta.rank() != 2 || theta.dim(1) != segments_.total()) {
    throw DimensionError("decode expects [K, " + std::to_string(segments_.total()) + "], got " +
                         shape_str(theta.shape()));
  }
  const int k = theta.dim(0), r = config_.resolution;
  const Segments& s = segments_;
  Tensor tg = slice(theta, 1, 0, s.geometry);
  Tensor ta = slice(theta, 1, s.geometry, s.albedo);
  Tensor tv = slice(theta, 1, s.geometry + s.albedo, s.view);
  Tensor tl = slice(theta, 1, s.geometry + s.albedo + s.view, s.light);

  ProbeBatch out;
  const double mid = 0.5 * (config_.depth_min + config_.depth_max);
  const double half = 0.5 * (config_.depth_max - config_.depth_min);
  out.depth = add_scalar(scale(reshape(run_image_decoder(depth_, tg), {k, r, r}), half), mid);
  out.albedo = add_scalar(scale(permute(run_image_decoder(albedo_, ta), {0, 2, 3, 1}), 0.5), 0.5);

  const DType dt = theta.dtype();
  Tensor view_scale = Tensor::from_values(
      {6}, {ViewRanges::pitch, ViewRanges::yaw, ViewRanges::roll, ViewRanges::translation, ViewRanges::translation,
            ViewRanges::translation},
      dt);
  out.view = mul(tanh(view_.out(tanh(view_.hidden(tv)))), view_scale);
  Tensor light_scale = Tensor::from_values({4}, {0.5, 0.5, 1.0, 1.0}, dt);
  Tensor light_offset = Tensor::from_values({4}, {0.5, 0.5, 0.0, 0.0}, dt);
  out.light = add(mul(tanh(light_.out(tanh(light_.hidden(tl)))), light_scale), light_offset);
  return out;
}

}  // namespace marrprobe::probes
