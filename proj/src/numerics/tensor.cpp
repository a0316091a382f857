#include "marrprobe/numerics/tensor.hpp"

#include <atomic>
#include <sstream>

namespace marrprobe::numerics {

namespace {
std::atomic<DType> g_default_dtype{DType::f32};

Buffer make_buffer(DType dtype, std::size_t n) {
  if (dtype == DType::f32) return Buffer(std::vector<float>(n, 0.0f));
  return Buffer(std::vector<double>(n, 0.0));
}
}  // namespace

const char* dtype_name(DType dtype) noexcept { return dtype == DType::f32 ? "f32" : "f64"; }

DType default_dtype() noexcept { return g_default_dtype.load(std::memory_order_relaxed); }

void set_default_dtype(DType dtype) noexcept { g_default_dtype.store(dtype, std::memory_order_relaxed); }

PrecisionScope::PrecisionScope(DType dtype) noexcept : previous_(default_dtype()) {
  set_default_dtype(dtype);
}

PrecisionScope::~PrecisionScope() { set_default_dtype(previous_); }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = dtype;
  impl->data = make_buffer(dtype, numerics::numel(shape));
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  dispatch(dtype, [&](auto tag) {
    using T = typename decltype(tag)::type;
    for (T& v : t.mutable_data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
  if (numerics::numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  Tensor t = zeros(shape, dtype);
  dispatch(dtype, [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto d = t.mutable_data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({}, value, dtype); }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return impl().shape[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::numel() const { return numerics::numel(impl().shape); }

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::size_t flat) const {
  return dispatch(dtype(), [&](auto tag) -> double {
    using T = typename decltype(tag)::type;
    return static_cast<double>(data<T>()[flat]);
  });
}

void Tensor::set(std::size_t flat, double value) {
  dispatch(dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    mutable_data<T>()[flat] = static_cast<T>(value);
  });
}

std::vector<double> Tensor::values() const {
  return dispatch(dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto d = data<T>();
    return std::vector<double>(d.begin(), d.end());
  });
}

Tensor Tensor::grad() const {
  Tensor g = zeros(shape(), dtype());
  if (!has_grad()) return g;
  g.impl_->data = *impl_->grad;
  return g;
}

void Tensor::zero_grad() const {
  if (impl_) impl_->grad.reset();
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->dtype = dtype();
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  Tensor out = zeros(shape(), target);
  dispatch(dtype(), [&](auto src_tag) {
    using S = typename decltype(src_tag)::type;
    dispatch(target, [&](auto dst_tag) {
      using D = typename decltype(dst_tag)::type;
      auto s = data<S>();
      auto d = out.mutable_data<D>();
      for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<D>(s[i]);
    });
  });
  return out;
}

}  // namespace marrprobe::numerics
