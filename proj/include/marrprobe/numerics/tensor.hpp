#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "marrprobe/numerics/errors.hpp"

namespace marrprobe::numerics {

// Storage precision. Training runs in f32; gradient verification switches the
// process-wide default to f64 through PrecisionScope.
enum class DType : std::uint8_t { f32, f64 };

const char* dtype_name(DType dtype) noexcept;
DType default_dtype() noexcept;
void set_default_dtype(DType dtype) noexcept;

class PrecisionScope {
 public:
  explicit PrecisionScope(DType dtype) noexcept;
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  DType previous_;
};

// Invokes f(std::type_identity<T>{}) with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) return f(std::type_identity<float>{});
  return f(std::type_identity<double>{});
}

template <class T>
constexpr DType dtype_of() noexcept {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer data;
  std::optional<Buffer> grad;
  bool requires_grad = false;
};

// Shared handle to a dense row-major array. Copies alias the same storage;
// use detach() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = default_dtype());
  static Tensor full(const Shape& shape, double value, DType dtype = default_dtype());
  static Tensor from_values(const Shape& shape, std::span<const double> values,
                            DType dtype = default_dtype());
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values,
                            DType dtype = default_dtype());
  static Tensor scalar(double value, DType dtype = default_dtype());

  bool defined() const noexcept { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  int rank() const { return static_cast<int>(impl().shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const;
  DType dtype() const { return impl().dtype; }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);

  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(checked<T>().data);
  }
  template <class T>
  std::span<T> mutable_data() {
    return std::get<std::vector<T>>(checked<T>().data);
  }

  double item() const;
  double at(std::size_t flat) const;
  void set(std::size_t flat, double value);
  std::vector<double> values() const;

  bool has_grad() const { return defined() && impl_->grad.has_value(); }
  // Gradient as a fresh tensor; zeros when no gradient has been accumulated.
  Tensor grad() const;
  // Lazily allocated zero-initialized gradient buffer.
  template <class T>
  std::span<T> grad_span() const {
    TensorImpl& i = checked<T>();
    if (!i.grad) i.grad = Buffer(std::vector<T>(numel(), T{0}));
    return std::get<std::vector<T>>(*i.grad);
  }
  void zero_grad() const;

  Tensor detach() const;
  Tensor to(DType dtype) const;

  const TensorImpl* id() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  TensorImpl& impl() const;
  template <class T>
  TensorImpl& checked() const {
    TensorImpl& i = impl();
    if (i.dtype != dtype_of<T>()) {
      throw ContractError(std::string("tensor dtype is ") + dtype_name(i.dtype) +
                          ", requested " + dtype_name(dtype_of<T>()));
    }
    return i;
  }

  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace marrprobe::numerics
