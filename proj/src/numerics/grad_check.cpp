#include "marrprobe/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "marrprobe/numerics/rng.hpp"
#include "marrprobe/numerics/tape.hpp"

namespace marrprobe::numerics {

namespace {

struct Eval {
  double value;
  std::uint64_t digest;
};

Eval evaluate(const std::function<Tensor()>& f) {
  decisions::Recorder rec;
  Tensor out = f();
  if (out.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  return {out.item(), rec.digest()};
}

std::vector<std::size_t> pick_coords(std::size_t n, const GradCheckOptions& o, std::size_t param) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (o.max_coords_per_param == 0 || n <= o.max_coords_per_param) return idx;
  Rng rng(Rng::derive(o.seed, param));
  for (std::size_t i = 0; i < o.max_coords_per_param; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(o.max_coords_per_param);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options) {
  if (options.eps <= 0) throw ContractError("grad_check: eps must be positive");
  GradCheckResult result;

  std::vector<Tensor> p = params;
  for (Tensor& t : p) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Eval base{};
  {
    Tape tape;
    TapeScope scope(tape);
    decisions::Recorder rec;
    Tensor out = f();
    if (out.numel() != 1 || out.rank() != 0) throw ContractError("grad_check: f must return a scalar");
    base = {out.item(), rec.digest()};
    backward(out, tape);
  }
  if (!std::isfinite(base.value)) {
    result.finite = false;
    result.failure = "f is non-finite at the unperturbed point";
    return result;
  }
  std::vector<Tensor> analytic;
  analytic.reserve(p.size());
  for (const Tensor& t : p) analytic.push_back(t.grad());

  for (std::size_t pi = 0; pi < p.size(); ++pi) {
    Tensor& t = p[pi];
    for (std::size_t c : pick_coords(t.numel(), options, pi)) {
      const double orig = t.at(c);
      t.set(c, orig + options.eps);
      const Eval plus = evaluate(f);
      t.set(c, orig - options.eps);
      const Eval minus = evaluate(f);
      t.set(c, orig);
      if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
        result.finite = false;
        result.worst_param = pi;
        result.worst_coord = c;
        result.failure = "non-finite f at perturbed coordinate " + std::to_string(c) + " of parameter " +
                         std::to_string(pi);
        return result;
      }
      if (options.exclude_kinks && (plus.digest != base.digest || minus.digest != base.digest)) {
        ++result.flagged;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.eps);
      const double a = analytic[pi].at(c);
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (err > result.max_rel_error || result.checked == 1) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          result.worst_param = pi;
          result.worst_coord = c;
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  for (Tensor& t : p) t.zero_grad();
  return result;
}

}  // namespace marrprobe::numerics
