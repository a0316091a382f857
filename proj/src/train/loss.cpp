#include "marrprobe/train/loss.hpp"

#include <cmath>
#include <numbers>

#include "marrprobe/numerics/ops.hpp"

namespace marrprobe::train {

using namespace numerics;

const char* coverage_mode_name(CoverageMode m) { return m == CoverageMode::ignore ? "ignore" : "penalize"; }

CoverageMode parse_coverage_mode(const std::string& s) {
  if (s == "ignore") return CoverageMode::ignore;
  if (s == "penalize") return CoverageMode::penalize;
  throw ConfigError("coverage mode must be 'ignore' or 'penalize', got '" + s + "'");
}

namespace {

Tensor term(const Tensor& image, const Tensor& render, const Tensor& sigma3, const Tensor& log_term, CoverageMode mode,
            const Tensor& coverage) {
  const int r = image.dim(0);
  Tensor nll = add(log_term, div(scale(abs(sub(render, image)), std::numbers::sqrt2), sigma3));
  if (mode == CoverageMode::penalize) return mean(nll);
  if (!coverage.defined() || coverage.shape() != Shape{r, r}) {
    throw DimensionError("reconstruction_loss: ignore mode needs a [R,R] coverage map");
  }
  double covered = 0.0;
  for (std::size_t p = 0; p < coverage.numel(); ++p) covered += coverage.at(p) > 0.5 ? 1.0 : 0.0;
  if (covered == 0.0) return Tensor::scalar(0.0, image.dtype());
  Tensor mask = reshape(coverage, {r, r, 1});
  return scale(sum(mul(nll, mask)), 1.0 / (3.0 * covered));
}

}  // namespace

Tensor reconstruction_loss(const Tensor& image, const Tensor& render, const Tensor& flipped, const Tensor& sigma,
                           CoverageMode mode, const Tensor& coverage, const Tensor& flipped_coverage) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image.dim(1) || render.shape() != image.shape() ||
      flipped.shape() != image.shape() || sigma.shape() != Shape{image.dim(0), image.dim(1)}) {
    throw DimensionError("reconstruction_loss: image " + shape_str(image.shape()) + ", render " +
                         shape_str(render.shape()) + ", flipped " + shape_str(flipped.shape()) + ", sigma " +
                         shape_str(sigma.shape()));
  }
  // Allow for the binary32 rounding of the floor itself. NaN passes so the
  // caller's non-finite diagnostic can name its source.
  const double floor = kSigmaMin * (1.0 - 1e-6);
  for (std::size_t p = 0; p < sigma.numel(); ++p) {
    const double s = sigma.at(p);
    if (s < floor) {
      throw ContractError("reconstruction_loss: sigma " + std::to_string(s) + " below floor " +
                          std::to_string(kSigmaMin) + " at pixel " + std::to_string(p));
    }
  }
  const int r = image.dim(0);
  Tensor sigma3 = reshape(sigma, {r, r, 1});
  Tensor log_term = log(scale(sigma3, std::numbers::sqrt2));
  return add(term(image, render, sigma3, log_term, mode, coverage),
             term(image, flipped, sigma3, log_term, mode, flipped_coverage));
}

}  // namespace marrprobe::train
