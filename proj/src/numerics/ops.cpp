#include "marrprobe/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "marrprobe/numerics/kernels.hpp"

namespace marrprobe::numerics {

namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ContractError(std::string(op) + ": mixed dtypes " + dtype_name(a.dtype()) + " and " +
                        dtype_name(b.dtype()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  }
  return axis;
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= static_cast<std::size_t>(s[i]);
  r.length = static_cast<std::size_t>(s[axis]);
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= static_cast<std::size_t>(s[i]);
  return r;
}

// ---------------------------------------------------------------- broadcasting

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
  }
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  const std::size_t r = std::max(a.size(), b.size());
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const int ia = static_cast<int>(i) - static_cast<int>(r - a.size());
    const int ib = static_cast<int>(i) - static_cast<int>(r - b.size());
    const int da = ia >= 0 ? a[ia] : 1;
    const int db = ib >= 0 ? b[ib] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " do not broadcast");
    }
    p.out[i] = std::max(da, db);
    if (ia >= 0 && da != 1) p.stride_a[i] = sa[ia];
    if (ib >= 0 && db != 1) p.stride_b[i] = sb[ib];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over every output element in row-major order.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::size_t total = numel(p.out);
  if (total == 0) return;
  if (p.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  const std::size_t last = static_cast<std::size_t>(p.out[r - 1]);
  const std::size_t la = p.stride_a[r - 1], lb = p.stride_b[r - 1];
  std::vector<int> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t base = 0; base < total; base += last) {
    for (std::size_t j = 0; j < last; ++j) f(base + j, ia + j * la, ib + j * lb);
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * static_cast<std::size_t>(idx[d]);
      ib -= p.stride_b[d] * static_cast<std::size_t>(idx[d]);
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul, div };

Tensor binary(BinaryKind kind, const char* name, const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, name);
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(plan.out, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.mutable_data<T>();
    switch (kind) {
      case BinaryKind::add:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] + y[ib]; });
        break;
      case BinaryKind::sub:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] - y[ib]; });
        break;
      case BinaryKind::mul:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] * y[ib]; });
        break;
      case BinaryKind::div:
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = x[ia] / y[ib]; });
        break;
    }
  });
  if (!should_record({&a, &b})) return out;
  record(name, {a, b}, out, [a, b, out, plan, kind]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto x = a.data<T>();
      auto y = b.data<T>();
      const bool need_a = a.requires_grad(), need_b = b.requires_grad();
      std::span<T> ga, gb;
      if (need_a) ga = a.grad_span<T>();
      if (need_b) gb = b.grad_span<T>();
      for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
          case BinaryKind::add:
            if (need_a) ga[ia] += g[i];
            if (need_b) gb[ib] += g[i];
            break;
          case BinaryKind::sub:
            if (need_a) ga[ia] += g[i];
            if (need_b) gb[ib] -= g[i];
            break;
          case BinaryKind::mul:
            if (need_a) ga[ia] += g[i] * y[ib];
            if (need_b) gb[ib] += g[i] * x[ia];
            break;
          case BinaryKind::div:
            if (need_a) ga[ia] += g[i] / y[ib];
            if (need_b) gb[ib] -= g[i] * x[ia] / (y[ib] * y[ib]);
            break;
        }
      });
    });
  });
  return out;
}

// Elementwise unary op. fwd(x) gives the value; deriv(x, y) gives dy/dx.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto xi = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < xi.size(); ++i) o[i] = fwd(xi[i]);
  });
  if (!should_record({&x})) return out;
  record(name, {x}, out, [x, out, deriv]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto xi = x.data<T>();
      auto yi = out.data<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xi[i], yi[i]);
    });
  });
  return out;
}

template <class T>
void note_sign_pattern(std::span<const T> v) {
  if (!decisions::enabled()) return;
  std::vector<std::uint8_t> bits((v.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] > T{0}) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  decisions::note_bits(bits);
}

Tensor copy_with_shape(const Tensor& x, const Shape& shape) {
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    std::copy(s.begin(), s.end(), out.mutable_data<T>().begin());
  });
  return out;
}

}  // namespace

// -------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryKind::div, "div", a, b); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](auto v) { return static_cast<decltype(v)>(v * factor); },
      [factor](auto v, auto) { return static_cast<decltype(v)>(factor); });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](auto v) { return static_cast<decltype(v)>(v + offset); },
      [](auto v, auto) { return static_cast<decltype(v)>(1); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](auto v) { return std::log(v); },
      [](auto v, auto) { return static_cast<decltype(v)>(1) / v; });
}

Tensor abs(const Tensor& x) {
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    note_sign_pattern<T>(x.data<T>());
  });
  return unary(
      "abs", x, [](auto v) { return std::abs(v); },
      [](auto v, auto) {
        using T = decltype(v);
        return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0});
      });
}

Tensor relu(const Tensor& x) {
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    note_sign_pattern<T>(x.data<T>());
  });
  return unary(
      "relu", x,
      [](auto v) {
        using T = decltype(v);
        return v < T{0} ? T{0} : v;  // NaN passes through
      },
      [](auto v, auto) {
        using T = decltype(v);
        return v > T{0} ? T{1} : T{0};
      });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](auto v) { return std::tanh(v); },
      [](auto, auto y) { return static_cast<decltype(y)>(1) - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](auto v) {
        using T = decltype(v);
        return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
      },
      [](auto, auto y) { return y * (static_cast<decltype(y)>(1) - y); });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](auto v) { return std::sqrt(v); },
      [](auto, auto y) { return static_cast<decltype(y)>(0.5) / y; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](auto v) { return v * v; },
      [](auto v, auto) { return static_cast<decltype(v)>(2) * v; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      "gelu", x,
      [](auto v) {
        using T = decltype(v);
        const T c = static_cast<T>(0.7978845608028654);
        return T{0.5} * v * (T{1} + std::tanh(c * (v + static_cast<T>(0.044715) * v * v * v)));
      },
      [](auto v, auto) {
        using T = decltype(v);
        const T c = static_cast<T>(0.7978845608028654);
        const T k = static_cast<T>(0.044715);
        const T t = std::tanh(c * (v + k * v * v * v));
        return T{0.5} * (T{1} + t) + T{0.5} * v * (T{1} - t * t) * c * (T{1} + T{3} * k * v * v);
      });
}

Tensor softplus(const Tensor& x) {
  return unary(
      "softplus", x,
      [](auto v) {
        using T = decltype(v);
        return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v)));
      },
      [](auto v, auto) {
        using T = decltype(v);
        return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
      });
}

// -------------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  const bool batched = a.rank() == 3;
  const bool valid = (a.rank() == 2 && b.rank() == 2) ||
                     (a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0));
  if (!valid || a.dim(-1) != b.dim(-2)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = batched ? static_cast<std::size_t>(a.dim(0)) : 1;
  const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  Shape out_shape = batched ? Shape{a.dim(0), a.dim(1), b.dim(2)} : Shape{a.dim(0), b.dim(1)};
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto A = a.data<T>();
    auto B = b.data<T>();
    auto C = out.mutable_data<T>();
    for (std::size_t s = 0; s < batch; ++s) {
      kernels::gemm_accumulate(A.data() + s * m * k, B.data() + s * k * n, C.data() + s * m * n, m, k, n);
    }
  });
  if (!should_record({&a, &b})) return out;
  record("matmul", {a, b}, out, [a, b, out, batch, m, k, n]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto A = a.data<T>();
      auto B = b.data<T>();
      for (std::size_t s = 0; s < batch; ++s) {
        const T* gs = g.data() + s * m * n;
        if (a.requires_grad()) {
          T* ga = a.grad_span<T>().data() + s * m * k;
          const T* bs = B.data() + s * k * n;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) ga[i * k + kk] += kernels::dot(gs + i * n, bs + kk * n, n);
          }
        }
        if (b.requires_grad()) {
          T* gb = b.grad_span<T>().data() + s * k * n;
          const T* as = A.data() + s * m * k;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) kernels::axpy(as[i * k + kk], gs + i * n, gb + kk * n, n);
          }
        }
      }
    });
  });
  return out;
}

// ------------------------------------------------------- softmax / layernorm

Tensor softmax(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "softmax");
  const AxisSplit sp = split_at(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto xi = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t p = 0; p < sp.outer; ++p) {
      for (std::size_t q = 0; q < sp.inner; ++q) {
        const std::size_t base = p * sp.length * sp.inner + q;
        T mx = xi[base];
        for (std::size_t l = 1; l < sp.length; ++l) mx = std::max(mx, xi[base + l * sp.inner]);
        T total = 0;
        for (std::size_t l = 0; l < sp.length; ++l) {
          const T e = std::exp(xi[base + l * sp.inner] - mx);
          o[base + l * sp.inner] = e;
          total += e;
        }
        for (std::size_t l = 0; l < sp.length; ++l) o[base + l * sp.inner] /= total;
      }
    }
  });
  if (!should_record({&x})) return out;
  record("softmax", {x}, out, [x, out, sp]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto y = out.data<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t p = 0; p < sp.outer; ++p) {
        for (std::size_t q = 0; q < sp.inner; ++q) {
          const std::size_t base = p * sp.length * sp.inner + q;
          T s = 0;
          for (std::size_t l = 0; l < sp.length; ++l) s += g[base + l * sp.inner] * y[base + l * sp.inner];
          for (std::size_t l = 0; l < sp.length; ++l) {
            const std::size_t i = base + l * sp.inner;
            gx[i] += y[i] * (g[i] - s);
          }
        }
      }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (eps <= 0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t len = static_cast<std::size_t>(x.dim(-1));
  if (len < 1 || gain.numel() != len || bias.numel() != len) {
    throw DimensionError("layer_norm: gain/bias must match last axis of " + shape_str(x.shape()));
  }
  require_same_dtype(x, gain, "layer_norm");
  require_same_dtype(x, bias, "layer_norm");
  const std::size_t rows = x.numel() / len;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  // Normalized activations and reciprocal std per row, kept for backward.
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  Tensor rstd = Tensor::zeros({static_cast<int>(rows)}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto xi = x.data<T>();
    auto gi = gain.data<T>();
    auto bi = bias.data<T>();
    auto o = out.mutable_data<T>();
    auto xh = xhat.mutable_data<T>();
    auto rs = rstd.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = xi.data() + r * len;
      T mu = 0;
      for (std::size_t j = 0; j < len; ++j) mu += row[j];
      mu /= static_cast<T>(len);
      T var = 0;
      for (std::size_t j = 0; j < len; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(len);
      const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
      rs[r] = inv;
      for (std::size_t j = 0; j < len; ++j) {
        const T h = (row[j] - mu) * inv;
        xh[r * len + j] = h;
        o[r * len + j] = h * gi[j] + bi[j];
      }
    }
  });
  if (!should_record({&x, &gain, &bias})) return out;
  record("layer_norm", {x, gain, bias}, out, [x, gain, bias, out, xhat, rstd, rows, len]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto xh = xhat.data<T>();
      auto gi = gain.data<T>();
      auto rs = rstd.data<T>();
      if (gain.requires_grad() || bias.requires_grad()) {
        std::vector<T> gg(len, T{0}), gb(len, T{0});
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < len; ++j) {
            gg[j] += g[r * len + j] * xh[r * len + j];
            gb[j] += g[r * len + j];
          }
        }
        accumulate_grad<T>(gain, gg);
        accumulate_grad<T>(bias, gb);
      }
      if (x.requires_grad()) {
        auto gx = x.grad_span<T>();
        std::vector<T> gh(len);
        for (std::size_t r = 0; r < rows; ++r) {
          T m1 = 0, m2 = 0;
          for (std::size_t j = 0; j < len; ++j) {
            gh[j] = g[r * len + j] * gi[j];
            m1 += gh[j];
            m2 += gh[j] * xh[r * len + j];
          }
          m1 /= static_cast<T>(len);
          m2 /= static_cast<T>(len);
          for (std::size_t j = 0; j < len; ++j) {
            gx[r * len + j] += rs[r] * (gh[j] - m1 - xh[r * len + j] * m2);
          }
        }
      }
    });
  });
  return out;
}

// ---------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto xi = x.data<T>();
    T s = 0;
    for (T v : xi) s += v;
    out.mutable_data<T>()[0] = s;
  });
  if (!should_record({&x})) return out;
  record("sum", {x}, out, [x, out]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T g = out.grad_span<T>()[0];
      for (T& v : x.grad_span<T>()) v += g;
    });
  });
  return out;
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  axis = normalize_axis(axis, x.rank(), "sum");
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  if (keepdim) {
    shape[axis] = 1;
  } else {
    shape.erase(shape.begin() + axis);
  }
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto xi = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t p = 0; p < sp.outer; ++p) {
      for (std::size_t l = 0; l < sp.length; ++l) {
        const T* src = xi.data() + (p * sp.length + l) * sp.inner;
        T* dst = o.data() + p * sp.inner;
        for (std::size_t q = 0; q < sp.inner; ++q) dst[q] += src[q];
      }
    }
  });
  if (!should_record({&x})) return out;
  record("sum_axis", {x}, out, [x, out, sp]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t p = 0; p < sp.outer; ++p) {
        for (std::size_t l = 0; l < sp.length; ++l) {
          T* dst = gx.data() + (p * sp.length + l) * sp.inner;
          const T* src = g.data() + p * sp.inner;
          for (std::size_t q = 0; q < sp.inner; ++q) dst[q] += src[q];
        }
      }
    });
  });
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const int len = x.dim(axis);
  if (len == 0) throw ContractError("mean over an empty axis");
  return scale(sum(x, axis, keepdim), 1.0 / len);
}

// ------------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  int infer = -1;
  std::size_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one -1");
      infer = static_cast<int>(i);
    } else {
      known *= static_cast<std::size_t>(shape[i]);
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) {
      throw DimensionError("reshape: cannot infer dimension for " + shape_str(x.shape()));
    }
    shape[infer] = static_cast<int>(x.numel() / known);
  }
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = copy_with_shape(x, shape);
  if (!should_record({&x})) return out;
  record("reshape", {x}, out, [x, out]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      accumulate_grad<T>(x, out.grad_span<T>());
    });
  });
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw DimensionError("permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape shape(r);
  for (int i = 0; i < r; ++i) shape[i] = x.dim(perm[i]);
  const auto in_strides = row_major_strides(x.shape());
  std::vector<std::size_t> src_stride(r);
  for (int i = 0; i < r; ++i) src_stride[i] = in_strides[perm[i]];
  // Source offset for each destination element.
  const std::size_t total = x.numel();
  auto offsets = std::make_shared<std::vector<std::size_t>>(total);
  {
    std::vector<int> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < total; ++i) {
      (*offsets)[i] = off;
      for (int d = r - 1; d >= 0; --d) {
        ++idx[d];
        off += src_stride[d];
        if (idx[d] < shape[d]) break;
        off -= src_stride[d] * static_cast<std::size_t>(idx[d]);
        idx[d] = 0;
      }
    }
  }
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < total; ++i) o[i] = s[(*offsets)[i]];
  });
  if (!should_record({&x})) return out;
  record("permute", {x}, out, [x, out, offsets]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[(*offsets)[i]] += g[i];
    });
  });
  return out;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2");
  std::vector<int> perm(x.rank());
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[x.rank() - 1], perm[x.rank() - 2]);
  return permute(x, perm);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Tensor& first = parts.front();
  axis = normalize_axis(axis, first.rank(), "concat");
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < first.rank(); ++d) {
      if (d != axis && p.dim(d) != first.dim(d)) {
        throw DimensionError("concat: shapes " + shape_str(first.shape()) + " and " +
                             shape_str(p.shape()) + " differ off-axis");
      }
    }
    shape[axis] += p.dim(axis);
  }
  const AxisSplit sp = split_at(shape, axis);
  Tensor out = Tensor::zeros(shape, first.dtype());
  dispatch(first.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto o = out.mutable_data<T>();
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p.dim(axis)) * sp.inner;
      auto s = p.data<T>();
      for (std::size_t q = 0; q < sp.outer; ++q) {
        std::copy_n(s.data() + q * chunk, chunk, o.data() + q * sp.length * sp.inner + offset);
      }
      offset += chunk;
    }
  });
  if (!should_record(parts)) return out;
  record("concat", parts, out, [parts, out, sp, axis]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      std::size_t offset = 0;
      for (const Tensor& p : parts) {
        const std::size_t chunk = static_cast<std::size_t>(p.dim(axis)) * sp.inner;
        if (p.requires_grad()) {
          auto gp = p.grad_span<T>();
          for (std::size_t q = 0; q < sp.outer; ++q) {
            const T* src = g.data() + q * sp.length * sp.inner + offset;
            T* dst = gp.data() + q * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
          }
        }
        offset += chunk;
      }
    });
  });
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  axis = normalize_axis(axis, x.rank(), "slice");
  if (start < 0 || length < 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                         ") out of range for " + shape_str(x.shape()));
  }
  const AxisSplit sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor out = Tensor::zeros(shape, x.dtype());
  const std::size_t chunk = static_cast<std::size_t>(length) * sp.inner;
  const std::size_t offset = static_cast<std::size_t>(start) * sp.inner;
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t q = 0; q < sp.outer; ++q) {
      std::copy_n(s.data() + q * sp.length * sp.inner + offset, chunk, o.data() + q * chunk);
    }
  });
  if (!should_record({&x})) return out;
  record("slice", {x}, out, [x, out, sp, chunk, offset]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t q = 0; q < sp.outer; ++q) {
        T* dst = gx.data() + q * sp.length * sp.inner + offset;
        const T* src = g.data() + q * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    });
  });
  return out;
}

Tensor index_select(const Tensor& x, const std::vector<int>& indices) {
  if (x.rank() < 1) throw DimensionError("index_select on a scalar");
  const int rows = x.dim(0);
  for (int i : indices) {
    if (i < 0 || i >= rows) throw DimensionError("index_select: index " + std::to_string(i) + " out of range");
  }
  const std::size_t row = x.numel() / static_cast<std::size_t>(std::max(rows, 1));
  Shape shape = x.shape();
  shape[0] = static_cast<int>(indices.size());
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(s.data() + static_cast<std::size_t>(indices[i]) * row, row, o.data() + i * row);
    }
  });
  if (!should_record({&x})) return out;
  record("index_select", {x}, out, [x, out, indices, row]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t i = 0; i < indices.size(); ++i) {
        T* dst = gx.data() + static_cast<std::size_t>(indices[i]) * row;
        const T* src = g.data() + i * row;
        for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
      }
    });
  });
  return out;
}

Tensor flip(const Tensor& x, int axis) {
  axis = normalize_axis(axis, x.rank(), "flip");
  const AxisSplit sp = split_at(x.shape(), axis);
  auto mirror = [sp](std::size_t i) {
    const std::size_t q = i % sp.inner;
    const std::size_t l = (i / sp.inner) % sp.length;
    const std::size_t p = i / (sp.inner * sp.length);
    return (p * sp.length + (sp.length - 1 - l)) * sp.inner + q;
  };
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t i = 0; i < s.size(); ++i) o[i] = s[mirror(i)];
  });
  if (!should_record({&x})) return out;
  record("flip", {x}, out, [x, out, mirror]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t i = 0; i < g.size(); ++i) gx[mirror(i)] += g[i];
    });
  });
  return out;
}

Tensor hflip(const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 3) throw DimensionError("hflip expects [H,W] or [H,W,C]");
  return flip(x, 1);
}

// ----------------------------------------------------------- spatial / conv

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("upsample_nearest2x expects [B,C,H,W]");
  const std::size_t planes = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({x.dim(0), x.dim(1), 2 * x.dim(2), 2 * x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto s = x.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = s.data() + p * h * w;
      T* dst = o.data() + p * 4 * h * w;
      for (std::size_t y = 0; y < 2 * h; ++y) {
        const T* srow = src + (y / 2) * w;
        T* drow = dst + y * 2 * w;
        for (std::size_t xx = 0; xx < 2 * w; ++xx) drow[xx] = srow[xx / 2];
      }
    }
  });
  if (!should_record({&x})) return out;
  record("upsample_nearest2x", {x}, out, [x, out, planes, h, w]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto gx = x.grad_span<T>();
      for (std::size_t p = 0; p < planes; ++p) {
        const T* src = g.data() + p * 4 * h * w;
        T* dst = gx.data() + p * h * w;
        for (std::size_t y = 0; y < 2 * h; ++y) {
          const T* srow = src + y * 2 * w;
          T* drow = dst + (y / 2) * w;
          for (std::size_t xx = 0; xx < 2 * w; ++xx) drow[xx / 2] += srow[xx];
        }
      }
    });
  });
  return out;
}

Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  if (x.rank() != 4 || weight.rank() != 4 || weight.dim(2) != 3 || weight.dim(3) != 3 ||
      weight.dim(1) != x.dim(1) || bias.numel() != static_cast<std::size_t>(weight.dim(0))) {
    throw DimensionError("conv3x3: input " + shape_str(x.shape()) + ", weight " +
                         shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  if (stride != 1 && stride != 2) throw ContractError("conv3x3: stride must be 1 or 2");
  require_same_dtype(x, weight, "conv3x3");
  require_same_dtype(x, bias, "conv3x3");
  kernels::ConvGeometry geo;
  geo.batch = x.dim(0);
  geo.cin = x.dim(1);
  geo.cout = weight.dim(0);
  geo.h = x.dim(2);
  geo.w = x.dim(3);
  geo.stride = stride;
  geo.oh = (geo.h + stride - 1) / stride;
  geo.ow = (geo.w + stride - 1) / stride;
  Tensor out = Tensor::zeros({x.dim(0), weight.dim(0), static_cast<int>(geo.oh), static_cast<int>(geo.ow)}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    kernels::conv3x3_forward(geo, x.data<T>().data(), weight.data<T>().data(), bias.data<T>().data(),
                             out.mutable_data<T>().data());
  });
  if (!should_record({&x, &weight, &bias})) return out;
  record("conv3x3", {x, weight, bias}, out, [x, weight, bias, out, geo]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      const T* g = out.grad_span<T>().data();
      if (x.requires_grad()) {
        kernels::conv3x3_backward_input(geo, g, weight.data<T>().data(), x.grad_span<T>().data());
      }
      if (weight.requires_grad()) {
        kernels::conv3x3_backward_weight(geo, g, x.data<T>().data(), weight.grad_span<T>().data());
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_span<T>();
        const std::size_t plane = geo.oh * geo.ow;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          for (std::size_t c = 0; c < geo.cout; ++c) {
            const T* p = g + (b * geo.cout + c) * plane;
            T s = 0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            gb[c] += s;
          }
        }
      }
    });
  });
  return out;
}

Tensor bilinear_sample(const Tensor& grid, const Tensor& coords) {
  if (grid.rank() != 3 || coords.rank() != 3 || coords.dim(2) != 2) {
    throw DimensionError("bilinear_sample: grid " + shape_str(grid.shape()) + ", coords " +
                         shape_str(coords.shape()));
  }
  require_same_dtype(grid, coords, "bilinear_sample");
  const int gh = grid.dim(0), gw = grid.dim(1), ch = grid.dim(2);
  const std::size_t points = static_cast<std::size_t>(coords.dim(0)) * coords.dim(1);
  Tensor out = Tensor::zeros({coords.dim(0), coords.dim(1), ch}, grid.dtype());

  // Corner indices and fractional offsets, shared by forward and backward.
  struct Tap {
    int x0, x1, y0, y1;
    double fx, fy;
    bool inside_x, inside_y;
  };
  auto taps = std::make_shared<std::vector<Tap>>(points);
  auto locate = [](double c, int n, int& i0, int& i1, double& f, bool& inside) {
    inside = c >= 0.0 && c <= n - 1;
    const double cc = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<int>(std::floor(cc));
    if (i0 > n - 1) i0 = n - 1;
    i1 = std::min(i0 + 1, n - 1);
    f = cc - i0;
  };
  dispatch(grid.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto g = grid.data<T>();
    auto c = coords.data<T>();
    auto o = out.mutable_data<T>();
    for (std::size_t p = 0; p < points; ++p) {
      Tap& t = (*taps)[p];
      locate(static_cast<double>(c[2 * p]), gw, t.x0, t.x1, t.fx, t.inside_x);
      locate(static_cast<double>(c[2 * p + 1]), gh, t.y0, t.y1, t.fy, t.inside_y);
      const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
      for (int k = 0; k < ch; ++k) {
        const T v00 = g[(t.y0 * gw + t.x0) * ch + k], v01 = g[(t.y0 * gw + t.x1) * ch + k];
        const T v10 = g[(t.y1 * gw + t.x0) * ch + k], v11 = g[(t.y1 * gw + t.x1) * ch + k];
        o[p * ch + k] = (T{1} - fy) * ((T{1} - fx) * v00 + fx * v01) + fy * ((T{1} - fx) * v10 + fx * v11);
      }
    }
  });
  if (!should_record({&grid, &coords})) return out;
  record("bilinear_sample", {grid, coords}, out, [grid, coords, out, taps, gw, ch]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto go = out.grad_span<T>();
      auto g = grid.data<T>();
      std::span<T> gg, gc;
      if (grid.requires_grad()) gg = grid.grad_span<T>();
      if (coords.requires_grad()) gc = coords.grad_span<T>();
      for (std::size_t p = 0; p < taps->size(); ++p) {
        const Tap& t = (*taps)[p];
        const T fx = static_cast<T>(t.fx), fy = static_cast<T>(t.fy);
        for (int k = 0; k < ch; ++k) {
          const T gv = go[p * ch + k];
          const std::size_t i00 = (t.y0 * gw + t.x0) * ch + k, i01 = (t.y0 * gw + t.x1) * ch + k;
          const std::size_t i10 = (t.y1 * gw + t.x0) * ch + k, i11 = (t.y1 * gw + t.x1) * ch + k;
          if (!gg.empty()) {
            gg[i00] += gv * (T{1} - fy) * (T{1} - fx);
            gg[i01] += gv * (T{1} - fy) * fx;
            gg[i10] += gv * fy * (T{1} - fx);
            gg[i11] += gv * fy * fx;
          }
          if (!gc.empty()) {
            if (t.inside_x && t.x1 != t.x0) {
              gc[2 * p] += gv * ((T{1} - fy) * (g[i01] - g[i00]) + fy * (g[i11] - g[i10]));
            }
            if (t.inside_y && t.y1 != t.y0) {
              gc[2 * p + 1] += gv * ((T{1} - fx) * (g[i10] - g[i00]) + fx * (g[i11] - g[i01]));
            }
          }
        }
      }
    });
  });
  return out;
}

}  // namespace marrprobe::numerics
