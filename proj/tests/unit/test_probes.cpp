#include <cmath>

#include "doctest.h"
#include "marrprobe/numerics/grad_check.hpp"
#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/probes/probes.hpp"

using namespace marrprobe;
using namespace marrprobe::numerics;
using namespace marrprobe::probes;

namespace {
constexpr DType f64 = DType::f64;
}

TEST_CASE("template_activate worked example") {
  Tensor p = Tensor::from_values({2, 4}, {2, 3, 4, 5, 2, 3, 4, 5}, f64);
  Tensor w = Tensor::from_values({4, 2}, {1, 0, 0, 1, 1, 0, 0, 1}, f64);
  TemplateActivation a = template_activate(p, w);
  CHECK(a.theta.values() == std::vector<double>{2, 0, 4, 0, 0, 3, 0, 5});
  CHECK(a.assigned == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("template_activate single template and partition") {
  Rng rng(1);
  Tensor p = randn({1, 8}, rng, 1.0, f64);
  Tensor w = randn({8, 1}, rng, 1.0, f64);
  CHECK(template_activate(p, w).theta.values() == p.values());

  Tensor pk = randn({3, 8}, rng, 1.0, f64);
  CHECK_THROWS_AS(template_activate(pk, randn({8, 2}, rng, 1.0, f64)), ContractError);
  CHECK_THROWS_AS(template_activate(pk, randn({7, 3}, rng, 1.0, f64)), DimensionError);

  // Ties: equal scores go to the lowest template.
  Tensor same = Tensor::full({2, 3}, 1.0, f64);
  Tensor wt = Tensor::full({3, 2}, 1.0, f64);
  CHECK(template_activate(same, wt).assigned == std::vector<int>{0, 0, 0});
}

TEST_CASE("replicate_high") {
  Rng rng(2);
  Tensor p = randn({1, 12}, rng, 1.0, f64);
  Tensor r = replicate_high(p, 6);
  REQUIRE(r.shape() == Shape{6, 12});
  for (int k = 0; k < 6; ++k)
    for (int d = 0; d < 12; ++d) CHECK(r.at(k * 12 + d) == p.at(d));
  CHECK(replicate_high(p, 1).values() == p.values());
  CHECK_THROWS_AS(replicate_high(randn({2, 12}, rng, 1.0, f64), 6), ContractError);

  Tensor th = template_activate(r, randn({12, 6}, rng, 1.0, f64)).theta;
  for (int d = 0; d < 12; ++d) {
    double s = 0;
    for (int k = 0; k < 6; ++k) s += th.at(k * 12 + d);
    CHECK(s == p.at(d));
  }
}

TEST_CASE("template backward is the exact derivative of the softmax relaxation") {
  PrecisionScope ps(f64);
  Rng rng(3);
  Tensor p = randn({4, 10}, rng, 1.0).set_requires_grad(true);
  Tensor w = randn({10, 4}, rng, 1.0).set_requires_grad(true);
  Tensor wts = randn({4, 10}, rng, 1.0);
  for (double tau : {1.0, 0.5}) {
    auto f = [&] { return sum(mul(template_activate(p, w, TemplateMode::relaxed, tau).theta, wts)); };
    GradCheckResult r = grad_check(f, {p, w});
    CHECK(r.finite);
    CHECK(r.max_rel_error < 1e-5);
  }
  // The hard forward shares the same backward rule.
  Tape t1, t2;
  Tensor ph = p.detach().set_requires_grad(true), pr = p.detach().set_requires_grad(true);
  {
    TapeScope s(t1);
    backward(sum(mul(template_activate(ph, w, TemplateMode::hard).theta, wts)), t1);
  }
  w.zero_grad();
  {
    TapeScope s(t2);
    backward(sum(mul(template_activate(pr, w, TemplateMode::relaxed).theta, wts)), t2);
  }
  CHECK(ph.grad().values() == pr.grad().values());
}

TEST_CASE("segment split") {
  Segments s = Segments::for_dim(64);
  CHECK(s.geometry == 24);
  CHECK(s.albedo == 24);
  CHECK(s.view == 8);
  CHECK(s.light == 8);
  CHECK(Segments::for_dim(768).total() == 768);
  CHECK_THROWS_AS(Segments::for_dim(12), ConfigError);
}

TEST_CASE("decode: zero feature with zero heads sits at the range midpoints") {
  Rng rng(4);
  ParamSet ps;
  DecoderConfig cfg;
  cfg.albedo_head_std = 0.0;
  StageDecoders dec(ps, "dec", 64, cfg, rng);
  ProbeBatch b = dec.decode(Tensor::zeros({3, 64}));
  CHECK(b.depth.shape() == Shape{3, 64, 64});
  CHECK(b.albedo.shape() == Shape{3, 64, 64, 3});
  CHECK(b.view.shape() == Shape{3, 6});
  CHECK(b.light.shape() == Shape{3, 4});
  for (double v : b.depth.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));
  for (double v : b.albedo.values()) CHECK(v == 0.5);
  for (double v : b.view.values()) CHECK(v == 0.0);
  for (int k = 0; k < 3; ++k) {
    CHECK(b.light.at(k * 4 + 0) == 0.5);
    CHECK(b.light.at(k * 4 + 1) == 0.5);
    CHECK(b.light.at(k * 4 + 2) == 0.0);
    CHECK(b.light.at(k * 4 + 3) == 0.0);
  }
}

TEST_CASE("decode: outputs stay in range for 10^4 random features") {
  Rng rng(5);
  ParamSet ps;
  DecoderConfig cfg;
  cfg.resolution = 16;
  cfg.channels = {8, 8, 4};
  cfg.depth_head_std = 2.0;
  cfg.albedo_head_std = 2.0;
  cfg.pose_head_std = 2.0;
  StageDecoders dec(ps, "dec", 32, cfg, rng);
  const double lim[6] = {ViewRanges::pitch, ViewRanges::yaw, ViewRanges::roll, 0.2, 0.2, 0.2};
  // Outputs are stored in 32-bit, so saturated values equal the f32-rounded bound.
  auto out = [](double v, double lo, double hi) { return v < static_cast<float>(lo) || v > static_cast<float>(hi); };
  int violations = 0;
  for (int batch = 0; batch < 50; ++batch) {
    ProbeBatch b = dec.decode(randn({200, 32}, rng, 10.0));
    for (double v : b.depth.values()) violations += out(v, 0.9, 1.1);
    for (double v : b.albedo.values()) violations += out(v, 0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      for (int i = 0; i < 6; ++i) violations += out(b.view.at(k * 6 + i), -lim[i], lim[i]);
      for (int i = 0; i < 2; ++i) violations += out(b.light.at(k * 4 + i), 0.0, 1.0);
      for (int i = 2; i < 4; ++i) violations += out(b.light.at(k * 4 + i), -1.0, 1.0);
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("decoder config validation and round trip") {
  DecoderConfig c;
  c.validate();
  DecoderConfig bad = c;
  bad.channels = {4, 4};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.resolution = 48;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(to_json(decoder_config_from_json(to_json(c))) == to_json(c));
}

TEST_CASE("decoder gradients match finite differences") {
  PrecisionScope p(f64);
  Rng rng(6);
  ParamSet ps;
  DecoderConfig cfg;
  cfg.resolution = 8;
  cfg.channels = {3, 3};
  cfg.pose_head_std = 0.3;
  StageDecoders dec(ps, "dec", 16, cfg, rng);
  Tensor theta = randn({2, 16}, rng, 1.0).set_requires_grad(true);
  Rng wr(7);
  Tensor wd = randn({2, 8, 8}, wr, 1.0), wa = randn({2, 8, 8, 3}, wr, 1.0);
  Tensor wv = randn({2, 6}, wr, 1.0), wl = randn({2, 4}, wr, 1.0);
  auto f = [&] {
    ProbeBatch b = dec.decode(theta);
    return add(add(sum(mul(b.depth, wd)), sum(mul(b.albedo, wa))), add(sum(mul(b.view, wv)), sum(mul(b.light, wl))));
  };
  std::vector<Tensor> params = ps.tensors();
  params.push_back(theta);
  GradCheckResult r = grad_check(f, params);
  CHECK(r.finite);
  CHECK(r.checked > 100);
  CHECK(r.max_rel_error < 1e-5);
}
