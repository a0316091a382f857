#pragma once

#include <string>
#include <vector>

#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/rng.hpp"
#include "marrprobe/numerics/serialize.hpp"

namespace marrprobe::numerics {

// Ordered, named collection of learnable tensors. Order is creation order and
// is what checkpoints and the optimizer iterate over.
class ParamSet {
 public:
  // Registers t (marked requires_grad) under name; duplicate names throw.
  Tensor add(const std::string& name, Tensor t);
  void append(const std::string& prefix, const ParamSet& other);

  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad() const;

  // Copies values from `src` by name; shapes must match and every entry of
  // this set must be present.
  void load(const std::vector<NamedTensor>& src);

 private:
  std::vector<NamedTensor> entries_;
};

// y = x W + b over the last axis. W: [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when created without bias

  static Linear create(ParamSet& params, const std::string& name, int in, int out, Rng& rng, double stddev,
                       bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }
};

struct Conv3x3 {
  Tensor weight;  // [cout, cin, 3, 3]
  Tensor bias;    // [cout]
  int stride = 1;

  // He-normal initialization scaled by gain.
  static Conv3x3 create(ParamSet& params, const std::string& name, int cin, int cout, Rng& rng, int stride = 1,
                        double gain = 1.0);
  Tensor operator()(const Tensor& x) const { return conv3x3(x, weight, bias, stride); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  static LayerNorm create(ParamSet& params, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

}  // namespace marrprobe::numerics
