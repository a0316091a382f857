#include <cmath>
#include <sstream>

#include "doctest.h"
#include "marrprobe/numerics/grad_check.hpp"
#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/rng.hpp"
#include "marrprobe/numerics/serialize.hpp"
#include "marrprobe/numerics/tape.hpp"

using namespace marrprobe;
using namespace marrprobe::numerics;

namespace {

constexpr DType f64 = DType::f64;

Tensor leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Gradient of f at params, taped.
void run_backward(const std::function<Tensor()>& f) {
  Tape tape;
  TapeScope scope(tape);
  Tensor out = f();
  backward(out, tape);
}

// Random-weighted scalarization so every output element contributes.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = rand_uniform(y.shape(), rng, -1.0, 1.0, y.dtype());
  return sum(mul(y, w));
}

double check_op(const std::function<Tensor(const std::vector<Tensor>&)>& op, std::vector<Tensor> inputs,
                std::uint64_t seed = 3) {
  auto f = [&]() { return weighted_sum(op(inputs), seed); };
  GradCheckOptions o;
  o.exclude_kinks = false;
  const GradCheckResult r = grad_check(f, inputs, o);
  REQUIRE(r.finite);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("matmul hand cases and triple-loop oracle") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4}, f64);
  Tensor b = Tensor::from_values({2, 1}, {5, 6}, f64);
  Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at(0) == 17.0);
  CHECK(c.at(1) == 39.0);

  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1}, f64);
  CHECK(matmul(a, eye).values() == a.values());

  Rng rng(11);
  Tensor x = randn({3, 4}, rng, 1.0, f64);
  Tensor y = randn({4, 2}, rng, 1.0, f64);
  Tensor z = matmul(x, y);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += x.at(i * 4 + k) * y.at(k * 2 + j);
      CHECK(std::abs(z.at(i * 2 + j) - s) < 1e-12);
    }
  }
  CHECK_THROWS_AS(matmul(x, x), DimensionError);
  try {
    matmul(x, x);
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("[3x4]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  Tensor s = softmax(Tensor::from_values({2}, {0, 0}, f64), 0);
  CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));
  Tensor big = softmax(Tensor::from_values({2}, {1000, 0}, f64), 0);
  CHECK(std::abs(big.at(0) - 1.0) < 1e-12);
  CHECK(std::abs(big.at(1)) < 1e-12);

  Rng rng(5);
  Tensor x = randn({5}, rng, 2.0, f64);
  Tensor y = softmax(x, 0);
  double total = 0;
  for (int i = 0; i < 5; ++i) total += std::exp(x.at(i));
  for (int i = 0; i < 5; ++i) CHECK(std::abs(y.at(i) - std::exp(x.at(i)) / total) < 1e-10);

  // Non-last axis.
  Tensor m = randn({3, 4}, rng, 1.0, f64);
  Tensor sm = softmax(m, 0);
  for (int j = 0; j < 4; ++j) {
    double col = 0;
    for (int i = 0; i < 3; ++i) col += sm.at(i * 4 + j);
    CHECK(std::abs(col - 1.0) < 1e-12);
  }
}

TEST_CASE("layer_norm examples") {
  Tensor g = Tensor::full({4}, 1.0, f64), b = Tensor::zeros({4}, f64);
  Tensor c = layer_norm(Tensor::full({4}, 3.0, f64), g, b, 1e-5);
  for (double v : c.values()) CHECK(v == 0.0);

  Tensor two = layer_norm(Tensor::from_values({2}, {1, 3}, f64), Tensor::full({2}, 1.0, f64),
                          Tensor::zeros({2}, f64), 1e-14);
  CHECK(std::abs(two.at(0) + 1.0) < 1e-10);
  CHECK(std::abs(two.at(1) - 1.0) < 1e-10);

  Rng rng(9);
  Tensor x = randn({8}, rng, 10.0, f64);
  Tensor y = layer_norm(x, Tensor::full({8}, 1.0, f64), Tensor::zeros({8}, f64), 1e-5);
  double m = 0, v = 0;
  for (double e : y.values()) m += e;
  m /= 8;
  for (double e : y.values()) v += (e - m) * (e - m);
  v /= 8;
  CHECK(std::abs(m) < 1e-10);
  CHECK(std::abs(v - 1.0) < 1e-6);
  CHECK_THROWS_AS(layer_norm(x, g, b, 0.0), ContractError);
}

TEST_CASE("bilinear_sample examples and scalar oracle") {
  Tensor grid = Tensor::from_values({2, 3, 1}, {0, 1, 2, 3, 4, 5}, f64);
  Tensor lattice = Tensor::from_values({1, 3, 2}, {0, 0, 2, 1, 1, 1}, f64);
  Tensor s = bilinear_sample(grid, lattice);
  CHECK(s.at(0) == 0.0);
  CHECK(s.at(1) == 5.0);
  CHECK(s.at(2) == 4.0);

  Tensor mid = bilinear_sample(Tensor::from_values({1, 2, 1}, {0, 1}, f64),
                               Tensor::from_values({1, 1, 2}, {0.5, 0}, f64));
  CHECK(mid.at(0) == 0.5);

  // Border clamp.
  Tensor out = bilinear_sample(grid, Tensor::from_values({1, 2, 2}, {-3, -1, 9, 7}, f64));
  CHECK(out.at(0) == 0.0);
  CHECK(out.at(1) == 5.0);

  Rng rng(21);
  const int H = 5, W = 6, C = 2;
  Tensor g = randn({H, W, C}, rng, 1.0, f64);
  Tensor co = rand_uniform({4, 3, 2}, rng, 0.0, 4.0, f64);
  Tensor r = bilinear_sample(g, co);
  for (int p = 0; p < 12; ++p) {
    const double x = co.at(2 * p), y = co.at(2 * p + 1);
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    for (int k = 0; k < C; ++k) {
      auto G = [&](int yy, int xx) { return g.at((yy * W + xx) * C + k); };
      const double want = (1 - fy) * (1 - fx) * G(y0, x0) + (1 - fy) * fx * G(y0, x0 + 1) +
                          fy * (1 - fx) * G(y0 + 1, x0) + fy * fx * G(y0 + 1, x0 + 1);
      CHECK(std::abs(r.at(p * C + k) - want) < 1e-12);
    }
  }
}

TEST_CASE("backward examples") {
  Tensor x = leaf(Tensor::scalar(3.0, f64));
  run_backward([&] { return square(x); });
  CHECK(x.grad().item() == 6.0);

  Tensor a = leaf(Tensor::scalar(2.0, f64));
  Tensor b = leaf(Tensor::scalar(5.0, f64));
  Tensor unused = leaf(Tensor::full({3}, 1.0, f64));
  run_backward([&] { return add(mul(a, b), a); });
  CHECK(a.grad().item() == 6.0);
  CHECK(b.grad().item() == 2.0);
  for (double v : unused.grad().values()) CHECK(v == 0.0);

  Tape tape;
  TapeScope scope(tape);
  Tensor v = leaf(Tensor::full({3}, 1.0, f64));
  Tensor nonscalar = scale(v, 2.0);
  CHECK_THROWS_AS(backward(nonscalar, tape), ContractError);
}

TEST_CASE("composite through matmul, softmax and layer_norm matches grad_check") {
  PrecisionScope p(f64);
  Rng rng(4);
  Tensor x = leaf(randn({1, 4}, rng, 1.0));
  Tensor w = leaf(randn({4, 4}, rng, 0.5));
  Tensor g = leaf(rand_uniform({4}, rng, 0.5, 1.5));
  Tensor b = leaf(randn({4}, rng, 0.1));
  auto f = [&]() {
    Tensor h = layer_norm(matmul(x, w), g, b);
    return weighted_sum(softmax(h, 1), 17);
  };
  GradCheckResult r = grad_check(f, {x, w, g, b});
  CHECK(r.finite);
  CHECK(r.flagged == 0);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("grad_check examples") {
  PrecisionScope p(f64);
  Rng rng(8);
  Tensor x = leaf(randn({6}, rng, 2.0));
  GradCheckResult sq = grad_check([&] { return sum(square(x)); }, {x});
  CHECK(sq.max_rel_error < 1e-8);
  CHECK(sq.checked == 6);

  GradCheckResult c = grad_check([&] { return sum(scale(x, 0.0)); }, {x});
  CHECK(c.max_rel_error == 0.0);

  Tensor y = leaf(Tensor::from_values({2}, {0.5, -1.0}));
  GradCheckResult bad = grad_check([&] { return sum(log(y)); }, {y});
  CHECK_FALSE(bad.finite);

  // Kinks: perturbing 0 across relu flips the mask and gets flagged.
  Tensor k = leaf(Tensor::from_values({3}, {0.0, 1.0, -1.0}));
  GradCheckResult kr = grad_check([&] { return sum(relu(k)); }, {k});
  CHECK(kr.flagged == 1);
  CHECK(kr.checked == 2);
  CHECK(kr.max_rel_error < 1e-10);

  GradCheckOptions sub;
  sub.max_coords_per_param = 3;
  CHECK(grad_check([&] { return sum(square(x)); }, {x}, sub).checked == 3);
}

TEST_CASE("every op matches finite differences in 64-bit") {
  PrecisionScope p(f64);
  Rng rng(12);
  auto R = [&](Shape s, double sd = 1.0) { return leaf(randn(s, rng, sd)); };
  auto P = [&](Shape s) { return leaf(rand_uniform(s, rng, 0.5, 2.0)); };
  using V = const std::vector<Tensor>&;
  const double tol = 1e-5;

  CHECK(check_op([](V v) { return add(v[0], v[1]); }, {R({2, 3}), R({3})}) < tol);
  CHECK(check_op([](V v) { return sub(v[0], v[1]); }, {R({2, 1, 3}), R({4, 1})}) < tol);
  CHECK(check_op([](V v) { return mul(v[0], v[1]); }, {R({2, 3}), R({2, 1})}) < tol);
  CHECK(check_op([](V v) { return div(v[0], v[1]); }, {R({3}), P({3})}) < tol);
  CHECK(check_op([](V v) { return scale(add_scalar(v[0], 0.3), -1.7); }, {R({4})}) < tol);
  CHECK(check_op([](V v) { return exp(v[0]); }, {R({4})}) < tol);
  CHECK(check_op([](V v) { return log(v[0]); }, {P({4})}) < tol);
  CHECK(check_op([](V v) { return abs(v[0]); }, {R({5})}) < tol);
  CHECK(check_op([](V v) { return relu(v[0]); }, {R({5})}) < tol);
  CHECK(check_op([](V v) { return tanh(v[0]); }, {R({4})}) < tol);
  CHECK(check_op([](V v) { return sigmoid(v[0]); }, {R({4}, 3.0)}) < tol);
  CHECK(check_op([](V v) { return sqrt(v[0]); }, {P({4})}) < tol);
  CHECK(check_op([](V v) { return gelu(v[0]); }, {R({6}, 2.0)}) < tol);
  CHECK(check_op([](V v) { return softplus(v[0]); }, {R({6}, 4.0)}) < tol);
  CHECK(check_op([](V v) { return matmul(v[0], v[1]); }, {R({2, 3, 4}), R({2, 4, 5})}) < tol);
  CHECK(check_op([](V v) { return softmax(v[0], 1); }, {R({2, 3, 2})}) < tol);
  CHECK(check_op([](V v) { return layer_norm(v[0], v[1], v[2]); }, {R({3, 5}), R({5}), R({5})}) < tol);
  CHECK(check_op([](V v) { return sum(v[0], 1, true); }, {R({2, 3, 4})}) < tol);
  CHECK(check_op([](V v) { return mean(v[0], 0); }, {R({2, 3})}) < tol);
  CHECK(check_op([](V v) { return mean(v[0]); }, {R({2, 3})}) < tol);
  CHECK(check_op([](V v) { return reshape(v[0], {3, -1}); }, {R({2, 3, 2})}) < tol);
  CHECK(check_op([](V v) { return permute(v[0], {2, 0, 1}); }, {R({2, 3, 4})}) < tol);
  CHECK(check_op([](V v) { return transpose(v[0]); }, {R({3, 4})}) < tol);
  CHECK(check_op([](V v) { return concat({v[0], v[1]}, 1); }, {R({2, 1, 3}), R({2, 2, 3})}) < tol);
  CHECK(check_op([](V v) { return slice(v[0], 1, 1, 2); }, {R({2, 4, 2})}) < tol);
  CHECK(check_op([](V v) { return index_select(v[0], {2, 0, 2}); }, {R({3, 2})}) < tol);
  CHECK(check_op([](V v) { return hflip(v[0]); }, {R({3, 4, 2})}) < tol);
  CHECK(check_op([](V v) { return upsample_nearest2x(v[0]); }, {R({1, 2, 3, 2})}) < tol);
  CHECK(check_op([](V v) { return conv3x3(v[0], v[1], v[2], 1); }, {R({2, 2, 5, 4}), R({3, 2, 3, 3}), R({3})}) <
        tol);
  CHECK(check_op([](V v) { return conv3x3(v[0], v[1], v[2], 2); }, {R({1, 2, 5, 6}), R({2, 2, 3, 3}), R({2})}) <
        tol);
  CHECK(check_op([](V v) { return bilinear_sample(v[0], v[1]); },
                 {R({4, 5, 2}), leaf(rand_uniform({2, 3, 2}, rng, 0.2, 3.7))}) < tol);
}

TEST_CASE("conv3x3 matches a direct zero-padded oracle") {
  Rng rng(2);
  for (int stride : {1, 2}) {
    Tensor x = randn({2, 3, 7, 6}, rng, 1.0, f64);
    Tensor w = randn({4, 3, 3, 3}, rng, 1.0, f64);
    Tensor b = randn({4}, rng, 1.0, f64);
    Tensor y = conv3x3(x, w, b, stride);
    const int oh = (7 + stride - 1) / stride, ow = (6 + stride - 1) / stride;
    REQUIRE(y.shape() == Shape{2, 4, oh, ow});
    for (int n = 0; n < 2; ++n)
      for (int co = 0; co < 4; ++co)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox) {
            double s = b.at(co);
            for (int ci = 0; ci < 3; ++ci)
              for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                  const int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                  if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                  s += w.at(((co * 3 + ci) * 3 + ky) * 3 + kx) * x.at(((n * 3 + ci) * 7 + iy) * 6 + ix);
                }
            CHECK(std::abs(y.at(((n * 4 + co) * oh + oy) * ow + ox) - s) < 1e-12);
          }
  }
}

TEST_CASE("backward is linear") {
  PrecisionScope p(f64);
  Rng rng(33);
  Tensor x = leaf(randn({4}, rng, 1.0));
  auto f = [&] { return sum(tanh(x)); };
  auto g = [&] { return sum(mul(exp(x), x)); };
  run_backward(f);
  const auto gf = x.grad().values();
  x.zero_grad();
  run_backward(g);
  const auto gg = x.grad().values();
  x.zero_grad();
  run_backward([&] { return add(scale(f(), 2.5), scale(g(), -0.75)); });
  const auto gc = x.grad().values();
  for (int i = 0; i < 4; ++i) CHECK(std::abs(gc[i] - (2.5 * gf[i] - 0.75 * gg[i])) < 1e-10);
}

TEST_CASE("identical seeds give bitwise identical outputs and gradients") {
  auto run = []() {
    Rng rng(77);
    Tensor x = leaf(randn({1, 3, 8, 8}, rng, 1.0, DType::f32));
    Tensor w = leaf(randn({4, 3, 3, 3}, rng, 0.3, DType::f32));
    Tensor b = leaf(Tensor::zeros({4}, DType::f32));
    Tape tape;
    TapeScope scope(tape);
    Tensor out = mean(relu(conv3x3(x, w, b, 1)));
    backward(out, tape);
    std::vector<double> v = w.grad().values();
    v.push_back(out.item());
    return v;
  };
  CHECK(run() == run());
}

TEST_CASE("tensor serialization round-trips f32 data") {
  Rng rng(1);
  Tensor t = randn({2, 3}, rng, 1.0, DType::f32);
  std::stringstream ss;
  write_tensor(ss, "w", t);
  write_tensor(ss, "s", Tensor::scalar(4.0, DType::f32));
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, bytes.find('\n')) == R"({"dtype":"f32","name":"w","shape":[2,3]})");
  NamedTensor a, b, c;
  REQUIRE(read_tensor(ss, a, DType::f32));
  REQUIRE(read_tensor(ss, b, DType::f32));
  CHECK_FALSE(read_tensor(ss, c, DType::f32));
  CHECK(a.name == "w");
  CHECK(a.tensor.shape() == Shape{2, 3});
  CHECK(a.tensor.values() == t.values());
  CHECK(b.tensor.rank() == 0);
  CHECK(b.tensor.item() == 4.0);

  std::stringstream trunc(bytes.substr(0, bytes.find('\n') + 9));
  NamedTensor d;
  CHECK_THROWS_AS(read_tensor(trunc, d), IoError);
}

TEST_CASE("contract checks") {
  Tensor a = Tensor::zeros({2}, DType::f32), b = Tensor::zeros({2}, f64);
  CHECK_THROWS_AS(add(a, b), ContractError);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  CHECK_THROWS_AS(reshape(Tensor::zeros({6}), {4, -1}), DimensionError);
  CHECK_THROWS_AS(slice(Tensor::zeros({4}), 0, 3, 2), DimensionError);
  CHECK_THROWS_AS(index_select(Tensor::zeros({2, 2}), {2}), DimensionError);
  CHECK_THROWS_AS(Tensor().shape(), ContractError);
}
