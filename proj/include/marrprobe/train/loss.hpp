#pragma once

#include <string>

#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::train {

using numerics::Tensor;

inline constexpr double kSigmaMin = 1e-3;

// How pixels that no triangle covers enter the reconstruction term. `penalize`
// compares the background color against the target; `ignore` drops them from
// the normalization set.
enum class CoverageMode { penalize, ignore };
const char* coverage_mode_name(CoverageMode m);
CoverageMode parse_coverage_mode(const std::string& s);

// Laplacian negative log-likelihood with one shared confidence map:
//   mean_O [ln(sqrt2 s) + sqrt2 |render - I| / s] + the same with the
// flipped render. image/render/flipped: [R, R, 3]; sigma: [R, R];
// coverage maps [R, R] are only read in `ignore` mode.
Tensor reconstruction_loss(const Tensor& image, const Tensor& render, const Tensor& flipped, const Tensor& sigma,
                           CoverageMode mode = CoverageMode::penalize, const Tensor& coverage = {},
                           const Tensor& flipped_coverage = {});

}  // namespace marrprobe::train
