#include "marrprobe/train/optim.hpp"

#include <cmath>

namespace marrprobe::train {

using namespace numerics;

Adam::Adam(const ParamSet& params, const AdamConfig& config) : params_(params.entries()), config_(config) {
  if (!(config.lr >= 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 >= 0.0 && config.beta2 < 1.0) || !(config.eps > 0.0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

double Adam::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    dispatch(p.tensor.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      for (T g : p.tensor.grad_span<T>()) sq += static_cast<double>(g) * static_cast<double>(g);
    });
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double factor = config_.clip > 0.0 && norm > config_.clip ? config_.clip / norm : 1.0;

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    if (!t.has_grad()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    dispatch(t.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = t.grad_span<T>();
      auto w = t.mutable_data<T>();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]) * factor;
        m[k] = b1 * m[k] + (1.0 - b1) * gk;
        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
        const double update = config_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.eps);
        w[k] = static_cast<T>(static_cast<double>(w[k]) - update);
      }
    });
  }
  return norm;
}

}  // namespace marrprobe::train
