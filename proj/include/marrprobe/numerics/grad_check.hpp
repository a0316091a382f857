#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::numerics {

struct GradCheckOptions {
  double eps = 1e-4;
  // 0 checks every coordinate; otherwise at most this many coordinates per
  // parameter tensor, drawn without replacement from `seed`.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Skip coordinates whose ±eps perturbation changes the branch digest of any
  // non-smooth op (relu mask, abs sign, hardmax winner, triangle id, ...).
  bool exclude_kinks = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t flagged = 0;
  bool finite = true;
  // Location of the worst coordinate, or of the first non-finite evaluation.
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string failure;

  bool ok(double tol) const { return finite && max_rel_error < tol; }
};

// f rebuilds the scalar loss from the current values of `params` (which the
// checker perturbs in place and restores). Analytic gradients come from one
// taped evaluation; numeric ones from central differences. The error metric
// per coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace marrprobe::numerics
