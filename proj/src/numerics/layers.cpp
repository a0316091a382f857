#include "marrprobe/numerics/layers.hpp"

#include <cmath>

namespace marrprobe::numerics {

Tensor ParamSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.push_back({name, t});
  return t;
}

void ParamSet::append(const std::string& prefix, const ParamSet& other) {
  for (const NamedTensor& e : other.entries()) add(prefix + e.name, e.tensor);
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const NamedTensor& e : entries_) out.push_back(e.tensor);
  return out;
}

Tensor ParamSet::get(const std::string& name) const {
  for (const NamedTensor& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw ContractError("unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const NamedTensor& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const NamedTensor& e : entries_) n += e.tensor.numel();
  return n;
}

void ParamSet::zero_grad() const {
  for (const NamedTensor& e : entries_) e.tensor.zero_grad();
}

void ParamSet::load(const std::vector<NamedTensor>& src) {
  for (NamedTensor& e : entries_) {
    const NamedTensor* match = nullptr;
    for (const NamedTensor& s : src) {
      if (s.name == e.name) {
        match = &s;
        break;
      }
    }
    if (!match) throw IoError("checkpoint is missing parameter " + e.name);
    if (match->tensor.shape() != e.tensor.shape()) {
      throw IoError("parameter " + e.name + " has shape " + shape_str(match->tensor.shape()) + ", expected " +
                    shape_str(e.tensor.shape()));
    }
    for (std::size_t i = 0; i < e.tensor.numel(); ++i) e.tensor.set(i, match->tensor.at(i));
  }
}

Linear Linear::create(ParamSet& params, const std::string& name, int in, int out, Rng& rng, double stddev,
                      bool with_bias) {
  Linear l;
  l.weight = params.add(name + ".weight", randn({in, out}, rng, stddev));
  if (with_bias) l.bias = params.add(name + ".bias", Tensor::zeros({out}));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  const int in = weight.dim(0);
  if (x.dim(-1) != in) {
    throw DimensionError("Linear expects last axis " + std::to_string(in) + ", got " + shape_str(x.shape()));
  }
  Tensor y;
  if (x.rank() == 2) {
    y = matmul(x, weight);
  } else {
    Shape out_shape = x.shape();
    out_shape.back() = weight.dim(1);
    y = reshape(matmul(reshape(x, {-1, in}), weight), out_shape);
  }
  return bias.defined() ? add(y, bias) : y;
}

Conv3x3 Conv3x3::create(ParamSet& params, const std::string& name, int cin, int cout, Rng& rng, int stride,
                        double gain) {
  Conv3x3 c;
  c.stride = stride;
  c.weight = params.add(name + ".weight", randn({cout, cin, 3, 3}, rng, gain * std::sqrt(2.0 / (9.0 * cin))));
  c.bias = params.add(name + ".bias", Tensor::zeros({cout}));
  return c;
}

LayerNorm LayerNorm::create(ParamSet& params, const std::string& name, int dim) {
  LayerNorm n;
  n.gain = params.add(name + ".gain", Tensor::full({dim}, 1.0));
  n.bias = params.add(name + ".bias", Tensor::zeros({dim}));
  return n;
}

}  // namespace marrprobe::numerics
