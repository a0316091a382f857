#include <cmath>

#include "doctest.h"
#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/wint/encoder.hpp"

using namespace marrprobe;
using namespace marrprobe::numerics;
using namespace marrprobe::wint;

namespace {

constexpr DType f64 = DType::f64;

void fill_zero(const Tensor& t) {
  Tensor h = t;
  for (std::size_t i = 0; i < h.numel(); ++i) h.set(i, 0.0);
}

// Scalar reference for one window: rows of x are tokens.
using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t, int rows, int cols) {
  Mat m(rows, std::vector<double>(cols));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m[i][j] = t.at(i * cols + j);
  return m;
}

Mat linear_ref(const Mat& x, const Linear& l) {
  const int in = l.weight.dim(0), out = l.weight.dim(1);
  Mat y(x.size(), std::vector<double>(out, 0.0));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (int o = 0; o < out; ++o) {
      double s = l.bias.defined() ? l.bias.at(o) : 0.0;
      for (int i = 0; i < in; ++i) s += x[r][i] * l.weight.at(i * out + o);
      y[r][o] = s;
    }
  return y;
}

Mat layer_norm_ref(const Mat& x, const LayerNorm& n) {
  Mat y = x;
  for (auto& row : y) {
    double m = 0, v = 0;
    for (double e : row) m += e;
    m /= row.size();
    for (double e : row) v += (e - m) * (e - m);
    v /= row.size();
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - m) / std::sqrt(v + 1e-5) * n.gain.at(j) + n.bias.at(j);
  }
  return y;
}

double gelu_ref(double v) {
  return 0.5 * v * (1 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
}

}  // namespace

TEST_CASE("patch_embed grid sizes and linearity") {
  Rng rng(1);
  ParamSet ps;
  Linear proj = Linear::create(ps, "p", 48, 8, rng, 0.1);
  for (std::size_t i = 0; i < proj.bias.numel(); ++i) proj.bias.set(i, 0.01 * static_cast<double>(i));
  SUBCASE("224 -> 56x56") {
    Tensor pos = Tensor::zeros({56 * 56, 8});
    CHECK(patch_embed(Tensor::zeros({224, 224, 3}), 4, proj, pos).tokens.shape() == Shape{56, 56, 8});
  }
  SUBCASE("64 -> 16x16, zero image gives bias + position") {
    Tensor pos = randn({256, 8}, rng, 1.0);
    TokenGrid g = patch_embed(Tensor::zeros({64, 64, 3}), 4, proj, pos);
    REQUIRE(g.tokens.shape() == Shape{16, 16, 8});
    for (int t = 0; t < 256; ++t)
      for (int c = 0; c < 8; ++c) {
        const float want = static_cast<float>(proj.bias.at(c)) + static_cast<float>(pos.at(t * 8 + c));
        CHECK(g.tokens.at(t * 8 + c) == want);
      }
  }
  CHECK_THROWS_AS(patch_embed(Tensor::zeros({30, 30, 3}), 4, proj, Tensor::zeros({49, 8})), ConfigError);
}

TEST_CASE("patch_embed flattens each patch row, column, channel") {
  ParamSet ps;
  Rng rng(2);
  Linear proj = Linear::create(ps, "p", 48, 48, rng, 0.0);
  for (int i = 0; i < 48; ++i) proj.weight.set(i * 48 + i, 1.0);
  Tensor img = randn({8, 8, 3}, rng, 1.0, DType::f32);
  TokenGrid g = patch_embed(img, 4, proj, Tensor::zeros({4, 48}));
  // token (1, 0) covers rows 4..7, cols 0..3.
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(g.tokens.at((1 * 2 + 0) * 48 + (y * 4 + x) * 3 + c) == img.at(((4 + y) * 8 + x) * 3 + c));
}

TEST_CASE("window_partition tiling and inverse") {
  Rng rng(3);
  TokenGrid big{randn({56, 56, 4}, rng, 1.0), 0};
  WindowSet w = window_partition(big, 7);
  CHECK(w.windows.shape() == Shape{64, 49, 4});
  TokenGrid small{randn({4, 4, 2}, rng, 1.0), 0};
  CHECK(window_partition(small, 4).windows.shape() == Shape{1, 16, 2});
  CHECK(window_unpartition(w, 0).tokens.values() == big.tokens.values());
  // Row-major window order: window 1 starts at column 7 of row 0.
  CHECK(w.windows.at(1 * 49 * 4) == big.tokens.at(7 * 4));
  // Token (1, 0) of window 0 is grid row 1.
  CHECK(w.windows.at(7 * 4) == big.tokens.at(56 * 4));
  CHECK_THROWS_AS(window_partition(small, 3), ConfigError);
}

TEST_CASE("wint_block attention normalization and ablation identity") {
  PrecisionScope p(f64);
  Rng rng(4);
  ParamSet ps;
  BlockParams b = BlockParams::create(ps, "b", 64, 2, 4, rng);
  Tensor x = randn({3, 5, 64}, rng, 1.0);
  Tensor att;
  Tensor y = wint_block(x, b, &att);
  CHECK(att.shape() == Shape{6, 5, 5});
  for (int r = 0; r < 30; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) s += att.at(r * 5 + c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  fill_zero(b.v.weight);
  fill_zero(b.v.bias);
  fill_zero(b.out.weight);
  fill_zero(b.out.bias);
  Tensor y0 = wint_block(x, b);
  Tensor mlp_only = add(x, b.fc2(gelu(b.fc1(b.norm2(x)))));
  for (std::size_t i = 0; i < y0.numel(); ++i) CHECK(std::abs(y0.at(i) - mlp_only.at(i)) < 1e-12);
}

TEST_CASE("single-head block on a 3-token window matches a scalar oracle") {
  PrecisionScope p(f64);
  Rng rng(5);
  ParamSet ps;
  const int d = 4;
  BlockParams b = BlockParams::create(ps, "b", d, 1, 4, rng);
  for (const NamedTensor& e : ps.entries()) {
    Tensor t = e.tensor;
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, t.at(i) + 0.1 * rng.normal());
  }
  Tensor x = randn({1, 3, d}, rng, 1.0);
  Tensor y = wint_block(x, b);

  Mat X = to_mat(x, 3, d);
  Mat h = layer_norm_ref(X, b.norm1);
  Mat q = linear_ref(h, b.q), k = linear_ref(h, b.k), v = linear_ref(h, b.v);
  Mat mixed(3, std::vector<double>(d, 0.0));
  for (int i = 0; i < 3; ++i) {
    double s[3], mx = -1e300, tot = 0;
    for (int j = 0; j < 3; ++j) {
      s[j] = 0;
      for (int c = 0; c < d; ++c) s[j] += q[i][c] * k[j][c];
      s[j] /= std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    for (double& e : s) tot += (e = std::exp(e - mx));
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < d; ++c) mixed[i][c] += s[j] / tot * v[j][c];
  }
  Mat o = linear_ref(mixed, b.out);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < d; ++c) X[i][c] += o[i][c];
  Mat f1 = linear_ref(layer_norm_ref(X, b.norm2), b.fc1);
  for (auto& row : f1)
    for (double& e : row) e = gelu_ref(e);
  Mat f2 = linear_ref(f1, b.fc2);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < d; ++c) CHECK(std::abs(y.at(i * d + c) - (X[i][c] + f2[i][c])) < 1e-10);
}

TEST_CASE("patch_merge shapes and permutation projection") {
  Rng rng(6);
  ParamSet ps;
  Linear red = Linear::create(ps, "m", 128, 64, rng, 0.1, false);
  CHECK(patch_merge({randn({16, 16, 32}, rng, 1.0), 0}, red).tokens.shape() == Shape{8, 8, 64});
  Linear red2 = Linear::create(ps, "m2", 16, 8, rng, 0.1, false);
  CHECK(patch_merge({randn({56, 56, 4}, rng, 1.0), 0}, red2).tokens.shape() == Shape{28, 28, 8});

  // D = 2: a permutation of the 8 concatenated channels.
  Linear perm = Linear::create(ps, "perm", 8, 8, rng, 0.0, false);
  const int target[8] = {3, 0, 6, 1, 7, 2, 5, 4};
  for (int i = 0; i < 8; ++i) perm.weight.set(i * 8 + target[i], 1.0);
  TokenGrid g{randn({4, 4, 2}, rng, 1.0), 0};
  TokenGrid m = patch_merge(g, perm);
  REQUIRE(m.tokens.shape() == Shape{2, 2, 8});
  // Concatenation order for output cell (1, 0): (2,0), (3,0), (2,1), (3,1).
  const int src[4][2] = {{2, 0}, {3, 0}, {2, 1}, {3, 1}};
  for (int blk = 0; blk < 4; ++blk)
    for (int c = 0; c < 2; ++c) {
      const int in = blk * 2 + c;
      const double want = g.tokens.at((src[blk][0] * 4 + src[blk][1]) * 2 + c);
      CHECK(m.tokens.at((1 * 2 + 0) * 8 + target[in]) == want);
    }
  CHECK_THROWS_AS(patch_merge({randn({5, 5, 2}, rng, 1.0), 0}, perm), ConfigError);
}

TEST_CASE("probe insertion and harvesting") {
  Rng rng(7);
  TokenGrid g{randn({8, 8, 16}, rng, 1.0), 1};
  WindowSet w = window_partition(g, 2);
  REQUIRE(w.window_count() == 16);
  Tensor seed = randn({16}, rng, 1.0);
  WindowSet with = insert_probes(w, seed);
  CHECK(with.windows.shape() == Shape{16, 5, 16});
  CHECK_THROWS_AS(insert_probes(with, seed), ContractError);
  CHECK_THROWS_AS(harvest_probes(w), ContractError);

  // Identity blocks leave the seed in every slot.
  ParamSet ps;
  BlockParams b = BlockParams::create(ps, "b", 16, 1, 4, rng);
  for (const Tensor& t : {b.out.weight, b.out.bias, b.fc2.weight, b.fc2.bias}) fill_zero(t);
  with.windows = wint_block(wint_block(with.windows, b), b);
  WindowSet visual;
  Tensor probes = harvest_probes(with, &visual);
  CHECK(probes.shape() == Shape{16, 16});
  for (int k = 0; k < 16; ++k)
    for (int c = 0; c < 16; ++c) CHECK(probes.at(k * 16 + c) == seed.at(c));
  CHECK(visual.windows.values() == w.windows.values());
  CHECK_FALSE(visual.has_probe);
}

TEST_CASE("zero probe seeds diverge across windows after one block") {
  Rng rng(8);
  ParamSet ps;
  BlockParams b = BlockParams::create(ps, "b", 32, 1, 4, rng);
  WindowSet w = window_partition({randn({4, 4, 32}, rng, 1.0), 1}, 2);
  WindowSet with = insert_probes(w, Tensor::zeros({32}));
  with.windows = wint_block(with.windows, b);
  Tensor p = harvest_probes(with);
  double diff = 0;
  for (int c = 0; c < 32; ++c) diff += std::abs(p.at(c) - p.at(32 + c));
  CHECK(diff > 1e-3);
}

TEST_CASE("presets") {
  const WintConfig paper = WintConfig::paper();
  paper.validate();
  CHECK(paper.stages[0].blocks == 2);
  CHECK(paper.stages[2].blocks == 6);
  CHECK(paper.window_count(0) == 64);
  CHECK(paper.window_count(1) == 16);
  CHECK(paper.window_count(2) == 4);
  CHECK(paper.window_count(3) == 1);
  CHECK(paper.stages[0].probe_count == 64);
  CHECK(paper.stages[3].probe_count == 6);
  CHECK(paper.probed_stages() == std::vector<std::size_t>{1, 2, 3});
  CHECK(paper.stages[1].window_side * paper.stages[1].window_side == 49);
  WintConfig bad = WintConfig::desk();
  bad.stages[1].window_side = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  WintConfig bad2 = WintConfig::desk();
  bad2.stages[1].probe_count = 5;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);
  CHECK(to_json(WintConfig::desk()) == to_json(wint_config_from_json(to_json(WintConfig::desk()))));
}

TEST_CASE("desk encoder: probe shapes, determinism, parameter count") {
  Rng rng(9);
  Encoder enc(WintConfig::desk(), rng);
  Rng img_rng(10);
  Tensor img = rand_uniform({64, 64, 3}, img_rng, 0.0, 1.0);
  EncodeResult a = enc.encode(img);
  REQUIRE(a.probes.size() == 3);
  CHECK(a.probes[0].shape() == Shape{16, 64});
  CHECK(a.probes[1].shape() == Shape{4, 128});
  CHECK(a.probes[2].shape() == Shape{1, 256});
  CHECK(a.final_grid.tokens.shape() == Shape{2, 2, 256});
  EncodeResult b = enc.encode(img);
  for (int l = 0; l < 3; ++l) CHECK(a.probes[l].values() == b.probes[l].values());

  std::size_t want = 48 * 32 + 32 + 256 * 32;  // embed + positions
  const WintConfig& c = enc.config();
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const int d = c.stages[s].token_dim;
    if (s > 0) want += static_cast<std::size_t>(2 * d) * d;  // bias-free 4(d/2) -> d
    if (c.stages[s].probed) want += static_cast<std::size_t>(d);
    want += c.stages[s].blocks * BlockParams::parameter_count(d, 4);
  }
  CHECK(enc.params().scalar_count() == want);
  CHECK(BlockParams::parameter_count(32, 4) == 12 * 32 * 32 + 13 * 32);
}

TEST_CASE("paper encoder yields 16x192, 4x384 and 1x768 probes") {
  Rng rng(11);
  Encoder enc(WintConfig::paper(), rng);
  EncodeResult r = enc.encode(Tensor::full({224, 224, 3}, 0.5));
  REQUIRE(r.probes.size() == 3);
  CHECK(r.probes[0].shape() == Shape{16, 192});
  CHECK(r.probes[1].shape() == Shape{4, 384});
  CHECK(r.probes[2].shape() == Shape{1, 768});
}

TEST_CASE("stage-1 windows only see their own pixels") {
  PrecisionScope p(f64);
  Rng rng(12);
  ParamSet ps;
  Linear proj = Linear::create(ps, "e", 48, 32, rng, 0.2);
  Tensor pos = randn({256, 32}, rng, 0.02);
  BlockParams b = BlockParams::create(ps, "b", 32, 1, 4, rng);
  Tensor img = rand_uniform({64, 64, 3}, rng, 0.0, 1.0);
  Tensor masked = img.detach();
  // Window 0 of a 16x16 grid with side 4 covers pixels [0,16) x [0,16).
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      if (y >= 16 || x >= 16)
        for (int c = 0; c < 3; ++c) masked.set((y * 64 + x) * 3 + c, 0.0);
  auto stage = [&](const Tensor& im) {
    WindowSet w = window_partition(patch_embed(im, 4, proj, pos), 4);
    return wint_block(wint_block(w.windows, b), b);
  };
  Tensor a = stage(img), m = stage(masked);
  for (int i = 0; i < 16 * 32; ++i) CHECK(a.at(i) == m.at(i));
  bool other_changed = false;
  for (std::size_t i = 16 * 32; i < a.numel(); ++i) other_changed |= a.at(i) != m.at(i);
  CHECK(other_changed);
}
