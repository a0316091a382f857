#pragma once

#include <vector>

#include "marrprobe/numerics/layers.hpp"

namespace marrprobe::train {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 5.0;  // global gradient-norm clip; <= 0 disables
};

// Adam with bias correction. Moments are kept in 64-bit whatever the
// parameter dtype.
class Adam {
 public:
  Adam(const numerics::ParamSet& params, const AdamConfig& config);

  // Applies one update from the accumulated gradients and returns the global
  // gradient norm before clipping. Gradients are left untouched.
  double step();

  const AdamConfig& config() const noexcept { return config_; }
  AdamConfig& config() noexcept { return config_; }
  long steps() const noexcept { return t_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<numerics::NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace marrprobe::train
