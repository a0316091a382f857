#pragma once

#include <algorithm>
#include <cstddef>

// Dense inner loops shared by ops and the renderer. All loops run in a fixed
// order so results are bitwise reproducible for a given build.
namespace marrprobe::numerics::kernels {

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t L = 16;
  T acc[L] = {};
  std::size_t i = 0;
  for (; i + L <= n; i += L) {
    for (std::size_t l = 0; l < L; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += acc[l];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m,n] += A[m,k] * B[k,n], row-major.
template <class T>
inline void gemm_accumulate(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) axpy(A[i * k + kk], B + kk * n, C + i * n, n);
  }
}

struct ConvGeometry {
  std::size_t batch = 0, cin = 0, cout = 0, h = 0, w = 0, oh = 0, ow = 0, stride = 1;
};

// Output columns ox whose tap ix = ox*stride + kx - 1 lands inside [0, w).
inline void valid_columns(const ConvGeometry& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  lo = (kx == 0) ? 1 : 0;
  // ix <= w - 1  <=>  ox <= (w - kx) / stride
  if (g.w < kx) {
    hi = 0;
    return;
  }
  hi = std::min(g.ow, (g.w - kx) / g.stride + 1);
}

template <class T>
void conv3x3_forward(const ConvGeometry& g, const T* x, const T* wt, const T* bias, T* out) {
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* o = out + (b * g.cout + co) * out_plane;
      std::fill(o, o + out_plane, bias[co]);
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* src = x + (b * g.cin + ci) * in_plane;
        const T* k = wt + (co * g.cin + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const T* srow = src + static_cast<std::size_t>(iy) * g.w;
            T* orow = o + oy * g.ow;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const T kv = k[ky * 3 + kx];
              std::size_t lo, hi;
              valid_columns(g, kx, lo, hi);
              if (g.stride == 1) {
                const T* s = srow + kx - 1;
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += kv * s[ox];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) orow[ox] += kv * srow[ox * g.stride + kx - 1];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3x3_backward_input(const ConvGeometry& g, const T* gout, const T* wt, T* gx) {
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* go = gout + (b * g.cout + co) * out_plane;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        T* dst = gx + (b * g.cin + ci) * in_plane;
        const T* k = wt + (co * g.cin + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - 1;
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * g.w;
            const T* grow = go + oy * g.ow;
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const T kv = k[ky * 3 + kx];
              std::size_t lo, hi;
              valid_columns(g, kx, lo, hi);
              if (g.stride == 1) {
                T* d = drow + kx - 1;
                for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += kv * grow[ox];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) drow[ox * g.stride + kx - 1] += kv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3x3_backward_weight(const ConvGeometry& g, const T* gout, const T* x, T* gw) {
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* go = gout + (b * g.cout + co) * out_plane;
      for (std::size_t ci = 0; ci < g.cin; ++ci) {
        const T* src = x + (b * g.cin + ci) * in_plane;
        T* k = gw + (co * g.cin + ci) * 9;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            std::size_t lo, hi;
            valid_columns(g, kx, lo, hi);
            T acc = 0;
            for (std::size_t oy = 0; oy < g.oh; ++oy) {
              const long iy = static_cast<long>(oy * g.stride + ky) - 1;
              if (iy < 0 || iy >= static_cast<long>(g.h) || hi <= lo) continue;
              const T* srow = src + static_cast<std::size_t>(iy) * g.w;
              const T* grow = go + oy * g.ow;
              if (g.stride == 1) {
                acc += dot(grow + lo, srow + lo + kx - 1, hi - lo);
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) acc += grow[ox] * srow[ox * g.stride + kx - 1];
              }
            }
            k[ky * 3 + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace marrprobe::numerics::kernels
