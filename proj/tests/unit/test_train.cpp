#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "marrprobe/data/data.hpp"
#include "marrprobe/numerics/grad_check.hpp"
#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/tape.hpp"
#include "marrprobe/train/fit.hpp"

using namespace marrprobe;
using namespace marrprobe::numerics;
using namespace marrprobe::train;
namespace fs = std::filesystem;

namespace {

constexpr DType f64 = DType::f64;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "marrprobe_train_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Per-pixel scalar oracle of the two-term loss, summed in 64-bit.
double loss_oracle(const Tensor& img, const Tensor& a, const Tensor& b, const Tensor& sigma, const Tensor* cov = nullptr,
                   const Tensor* cov_b = nullptr) {
  const std::size_t px = sigma.numel();
  auto one = [&](const Tensor& r, const Tensor* c) {
    double acc = 0, n = 0;
    for (std::size_t p = 0; p < px; ++p) {
      if (c && c->at(p) < 0.5) continue;
      const double s = sigma.at(p);
      for (int ch = 0; ch < 3; ++ch) {
        acc += std::log(std::sqrt(2.0) * s) + std::sqrt(2.0) * std::abs(r.at(p * 3 + ch) - img.at(p * 3 + ch)) / s;
        n += 1;
      }
    }
    return acc / n;
  };
  return one(a, cov) + one(b, cov_b);
}

Tensor head_image(int size, std::uint64_t seed, double yaw) {
  data::HeadMaps maps = data::head_maps(data::HeadSpec::sample(seed), size);
  return render_head(maps, yaw).to(default_dtype());
}

}  // namespace

TEST_CASE("reconstruction loss closed forms") {
  Rng rng(1);
  Tensor img = rand_uniform({8, 8, 3}, rng, 0, 1, f64);
  CHECK(std::abs(reconstruction_loss(img, img, img, Tensor::full({8, 8}, 1 / std::sqrt(2.0), f64)).item()) < 1e-10);
  CHECK(std::abs(reconstruction_loss(img, img, img, Tensor::full({8, 8}, 1.0, f64)).item() - std::log(2.0)) < 1e-10);

  Tensor a = rand_uniform({8, 8, 3}, rng, 0, 1, f64), b = rand_uniform({8, 8, 3}, rng, 0, 1, f64);
  Tensor sigma = rand_uniform({8, 8}, rng, 0.01, 2.0, f64);
  CHECK(std::abs(reconstruction_loss(img, a, b, sigma).item() - loss_oracle(img, a, b, sigma)) < 1e-10);

  Tensor cov = Tensor::zeros({8, 8}, f64), cov_b = Tensor::zeros({8, 8}, f64);
  for (int p = 0; p < 64; ++p) {
    cov.set(p, rng.uniform() < 0.7);
    cov_b.set(p, rng.uniform() < 0.5);
  }
  const double ignored = reconstruction_loss(img, a, b, sigma, CoverageMode::ignore, cov, cov_b).item();
  CHECK(std::abs(ignored - loss_oracle(img, a, b, sigma, &cov, &cov_b)) < 1e-10);

  Tensor low = Tensor::full({8, 8}, 1.0, f64);
  low.set(5, 1e-4);
  CHECK_THROWS_AS(reconstruction_loss(img, a, b, low), ContractError);
  CHECK_THROWS_AS(reconstruction_loss(img, a, b, Tensor::full({4, 4}, 1.0, f64)), DimensionError);
  CHECK(parse_coverage_mode("ignore") == CoverageMode::ignore);
  CHECK_THROWS_AS(parse_coverage_mode("drop"), ConfigError);
}

TEST_CASE("reconstruction loss: sigma gradient vanishes at sqrt2 |r|") {
  PrecisionScope ps(f64);
  Rng rng(2);
  Tensor img = rand_uniform({6, 6, 3}, rng, 0, 1);
  Tensor r = Tensor::zeros({6, 6, 3});
  Tensor sigma = Tensor::zeros({6, 6});
  for (int p = 0; p < 36; ++p) {
    const double res = rng.uniform(0.05, 0.4) * (rng.uniform() < 0.5 ? -1 : 1);
    for (int c = 0; c < 3; ++c) r.set(p * 3 + c, img.at(p * 3 + c) + res);
    sigma.set(p, std::sqrt(2.0) * std::abs(res));
  }
  sigma.set_requires_grad(true);
  Tape tape;
  {
    TapeScope s(tape);
    backward(reconstruction_loss(img, r, r, sigma), tape);
  }
  double worst = 0;
  for (double g : sigma.grad().values()) worst = std::max(worst, std::abs(g));
  CHECK(worst < 1e-6);
}

TEST_CASE("reconstruction loss: mirror symmetry swaps the two terms") {
  Rng rng(3);
  Tensor img = rand_uniform({8, 8, 3}, rng, 0, 1, f64), a = rand_uniform({8, 8, 3}, rng, 0, 1, f64);
  Tensor b = rand_uniform({8, 8, 3}, rng, 0, 1, f64), s = rand_uniform({8, 8}, rng, 0.1, 1, f64);
  const double l1 = reconstruction_loss(img, a, b, s).item();
  const double l2 = reconstruction_loss(hflip(img), hflip(b), hflip(a), hflip(s)).item();
  CHECK(std::abs(l1 - l2) < 1e-12);
}

TEST_CASE("Adam update rule") {
  PrecisionScope ps(f64);
  ParamSet params;
  Tensor x = params.add("x", Tensor::from_values({3}, {1.0, -2.0, 0.5}));
  auto quad_grad = [&] {
    // f = 0.5 * sum(c * x^2) -> grad c * x.
    x.zero_grad();
    Tape tape;
    TapeScope s(tape);
    backward(scale(sum(mul(Tensor::from_values({3}, {1.0, 3.0, 0.5}), square(x))), 0.5), tape);
  };

  quad_grad();
  const std::vector<double> before = x.values();
  Adam frozen(params, {0.0, 0.9, 0.999, 1e-8, 5.0});
  frozen.step();
  CHECK(x.values() == before);

  Adam adam(params, {0.01, 0.9, 0.999, 1e-8, 0.0});
  const std::vector<double> g{1.0 * 1.0, 3.0 * -2.0, 0.5 * 0.5};
  for (int t = 1; t <= 2; ++t) {
    const std::vector<double> x0 = x.values();
    std::vector<double> grad(3);
    for (int i = 0; i < 3; ++i) grad[i] = std::vector<double>{1.0, 3.0, 0.5}[i] * x0[i];
    adam.step();
    for (int i = 0; i < 3; ++i) {
      const double m = adam.first_moment(0)[i], v = adam.second_moment(0)[i];
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      CHECK(std::abs(x.at(i) - (x0[i] - 0.01 * mh / (std::sqrt(vh) + 1e-8))) < 1e-12);
    }
    if (t == 1) {
      // First step: m = 0.1 g, v = 0.001 g^2, update = lr * sign(g).
      for (int i = 0; i < 3; ++i) CHECK(std::abs(x.at(i) - (x0[i] - 0.01 * grad[i] / (std::abs(grad[i]) + 1e-8))) < 1e-12);
    }
    quad_grad();
  }

  // Clipping: a gradient of norm 50 enters the moments rescaled to norm 5.
  ParamSet p2;
  Tensor y = p2.add("y", Tensor::zeros({2}));
  y.grad_span<double>()[0] = 30.0;
  y.grad_span<double>()[1] = 40.0;
  Adam clipped(p2, {1e-3, 0.9, 0.999, 1e-8, 5.0});
  CHECK(clipped.step() == doctest::Approx(50.0));
  CHECK(std::abs(clipped.first_moment(0)[0] - 0.1 * 3.0) < 1e-12);
  CHECK(std::abs(clipped.first_moment(0)[1] - 0.1 * 4.0) < 1e-12);
}

TEST_CASE("model levels and weighting") {
  Model model(ModelConfig::tiny(), 5);
  REQUIRE(model.levels().size() == 3);
  CHECK(model.levels()[2].name == "high");
  Tensor img = head_image(32, 1, 0.0);
  LossResult full = model.loss(img);
  REQUIRE(full.terms.size() == 3);
  LossOptions only_high;
  only_high.level_weights = {0, 0, 1};
  LossResult high = model.loss(img, only_high);
  CHECK(high.names == std::vector<std::string>{"high"});
  CHECK(high.total.item() == full.terms[2].item());
  CHECK(model.loss(img).total.item() == full.total.item());
  LossOptions none;
  none.level_weights = {0, 0, 0};
  CHECK_THROWS_AS(model.loss(img, none), ConfigError);

  // Hard routing: each channel lands in at most one template.
  const auto& theta = full.forward.levels[2].activation.theta;
  for (int d = 0; d < theta.dim(1); ++d) {
    int nonzero = 0;
    for (int k = 0; k < theta.dim(0); ++k) nonzero += theta.at(k * theta.dim(1) + d) != 0.0;
    CHECK(nonzero <= 1);
  }
  // Zero view heads put every assembled yaw at exactly 0.
  ModelConfig frontal = ModelConfig::tiny();
  frontal.decoder.pose_head_std = 0.0;
  for (const auto& lv : Model(frontal, 5).forward(img).levels) CHECK(lv.scene.view.at(1) == 0.0);

  Tensor batch = concat({reshape(img, {1, 32, 32, 3}), reshape(img, {1, 32, 32, 3})}, 0);
  Adam adam(model.params(), {});
  TrainConfig tc;
  tc.lr = 0.0;
  StepMetrics m = train_step(model, batch, adam, tc);
  CHECK(m.loss == doctest::Approx(full.total.item()).epsilon(1e-6));
}

TEST_CASE("gradients of every parameter class match finite differences") {
  PrecisionScope ps(f64);
  Model model(ModelConfig::tiny(), 11);
  Tensor img = head_image(32, 2, 15.0).to(f64);
  LossOptions opt;
  opt.template_mode = probes::TemplateMode::relaxed;
  auto f = [&] { return model.loss(img, opt).total; };
  for (const char* group : {"encoder.", "low.templates", "high.decoder.", "confidence."}) {
    GradCheckOptions o;
    o.max_coords_per_param = 3;
    o.seed = 1;
    GradCheckResult r = grad_check(f, model.group(group), o);
    INFO(group << ": " << r.failure << " worst " << r.worst_analytic << " vs " << r.worst_numeric);
    CHECK(r.finite);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("tiny model overfits one image") {
  Model model(ModelConfig::tiny(), 3);
  Tensor img = head_image(32, 4, 0.0);
  Tensor batch = reshape(img, {1, 32, 32, 3});
  TrainConfig tc;
  tc.lr = 3e-3;
  Adam adam(model.params(), {tc.lr});
  const double first = train_step(model, batch, adam, tc).loss;
  double last = first;
  for (int i = 1; i < 50; ++i) last = train_step(model, batch, adam, tc).loss;
  MESSAGE("loss " << first << " -> " << last);
  CHECK(last <= 0.5 * first);
}

TEST_CASE("non-finite loss names the offending tensor and skips the update") {
  Model model(ModelConfig::tiny(), 3);
  Tensor img = head_image(32, 4, 0.0);
  Tensor w = model.params().get("mid.decoder.depth.seed.weight");
  w.set(0, std::numeric_limits<double>::quiet_NaN());
  const std::vector<double> before = model.params().get("confidence.head.bias").values();
  Adam adam(model.params(), {});
  TrainConfig tc;
  try {
    train_step(model, reshape(img, {1, 32, 32, 3}), adam, tc);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    MESSAGE(msg);
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("mid") != std::string::npos);
  }
  CHECK(model.params().get("confidence.head.bias").values() == before);
}

TEST_CASE("fit: determinism, outputs, checkpoints") {
  const fs::path ds = scratch("ds");
  data::DatasetManifest m = data::split_by_identity(data::generate_synthetic(ds, 3, 32, 5, {-15, 0, 15}), 0.6, 1);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.lr = 1e-3;
  tc.checkpoint_every = 1;
  tc.heldout = 2;
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = scratch("run" + std::to_string(run));
    Model model(ModelConfig::tiny(), 7);
    FitResult r = fit(model, m, tc, dir);
    CHECK(r.stats.size() == 6);
    CHECK(fs::exists(dir / "run.json"));
    CHECK(fs::exists(dir / "checkpoints" / "epoch_001.bin"));
    CHECK(fs::exists(dir / "checkpoints" / "epoch_002.bin"));
    csv[run] = slurp(dir / "stats.csv");
    CHECK(slurp(dir / "model.bin") == slurp(dir / "checkpoints" / "epoch_002.bin"));

    Model back = load_model(dir);
    Tensor img = head_image(32, 9, 30.0);
    CHECK(back.loss(img).total.item() == model.loss(img).total.item());
    Model from_ckpt = load_model(dir / "checkpoints" / "epoch_002.bin");
    CHECK(from_ckpt.loss(img).total.item() == model.loss(img).total.item());
  }
  CHECK(csv[0] == csv[1]);
  CHECK(csv[0].find("epoch,level,mean_depth_var,mean_nx_var,mean_ny_var,mean_nz_var,mean_loss") != std::string::npos);

  tc.level_weights = {0, 0, 1};
  tc.epochs = 1;
  Model model(ModelConfig::tiny(), 7);
  FitResult high = fit(model, m, tc, scratch("high_only"));
  REQUIRE(high.stats.size() == 1);
  CHECK(high.stats[0].level == "high");

  data::DatasetManifest unsplit = data::generate_synthetic(scratch("ds2"), 2, 32, 5, {0});
  CHECK_THROWS_AS(fit(model, unsplit, tc, scratch("bad")), ConfigError);
  CHECK_THROWS_AS(load_model(scratch("empty")), IoError);
}
