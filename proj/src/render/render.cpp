#include "marrprobe/render/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/tape.hpp"

namespace marrprobe::render {

using namespace numerics;

void Camera::validate() const {
  if (resolution < 3) throw ConfigError("render resolution must be >= 3");
  if (!(half_width > 0) || !(plane_distance > 0)) throw ConfigError("camera half_width and plane_distance must be > 0");
}

// ------------------------------------------------------------------ assembly

SceneAssembly assemble(const probes::ProbeBatch& p) {
  const int k = p.depth.dim(0), r = p.depth.dim(1);
  if (p.depth.rank() != 3 || p.depth.dim(2) != r || p.albedo.rank() != 4 || p.albedo.dim(0) != k ||
      p.albedo.dim(1) != r || p.albedo.dim(2) != r || p.albedo.dim(3) != 3 || p.view.dim(0) != k ||
      p.light.dim(0) != k) {
    throw ContractError("assemble: probes disagree on count or resolution (depth " + shape_str(p.depth.shape()) +
                        ", albedo " + shape_str(p.albedo.shape()) + ")");
  }
  SceneAssembly s;
  const std::size_t pixels = static_cast<std::size_t>(r) * r;
  s.winner.assign(pixels, 0);
  s.masks = Tensor::zeros({k, r, r}, p.depth.dtype());
  dispatch(p.depth.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto d = p.depth.data<T>();
    auto m = s.masks.mutable_data<T>();
    for (std::size_t i = 0; i < pixels; ++i) {
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (d[j * pixels + i] > d[best * pixels + i]) best = j;
      }
      s.winner[i] = best;
      m[best * pixels + i] = T{1};
    }
  });
  if (decisions::enabled() && k > 1) {
    std::vector<std::uint8_t> bytes(s.winner.begin(), s.winner.end());
    decisions::note_bits(bytes);
  }
  s.depth = sum(mul(p.depth, s.masks), 0);
  s.albedo = sum(mul(p.albedo, reshape(s.masks, {k, r, r, 1})), 0);
  s.view = mean(p.view, 0);
  s.light = mean(p.light, 0);
  return s;
}

// ------------------------------------------------------------------- normals

Tensor normals_from_depth(const Tensor& depth, double pixel_pitch) {
  if (depth.rank() != 2 || depth.dim(0) != depth.dim(1) || depth.dim(0) < 3) {
    throw DimensionError("normals_from_depth expects [R,R] with R >= 3, got " + shape_str(depth.shape()));
  }
  const int r = depth.dim(0);
  Tensor out = Tensor::zeros({r, r, 3}, depth.dtype());
  // Unnormalized length per pixel, kept for backward.
  Tensor length = Tensor::zeros({r, r}, depth.dtype());
  auto du_taps = [r](int j, int& a, int& b, double& w) {
    if (j == 0) {
      a = 1, b = 0, w = 1.0;
    } else if (j == r - 1) {
      a = r - 1, b = r - 2, w = 1.0;
    } else {
      a = j + 1, b = j - 1, w = 0.5;
    }
  };
  // v points up: rows above minus rows below.
  auto dv_taps = [r](int i, int& a, int& b, double& w) {
    if (i == 0) {
      a = 0, b = 1, w = 1.0;
    } else if (i == r - 1) {
      a = r - 2, b = r - 1, w = 1.0;
    } else {
      a = i - 1, b = i + 1, w = 0.5;
    }
  };
  dispatch(depth.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto d = depth.data<T>();
    auto n = out.mutable_data<T>();
    auto len = length.mutable_data<T>();
    for (int i = 0; i < r; ++i) {
      int va, vb;
      double vw;
      dv_taps(i, va, vb, vw);
      for (int j = 0; j < r; ++j) {
        int ua, ub;
        double uw;
        du_taps(j, ua, ub, uw);
        const T du = static_cast<T>(uw) * (d[i * r + ua] - d[i * r + ub]);
        const T dv = static_cast<T>(vw) * (d[va * r + j] - d[vb * r + j]);
        const T mz = static_cast<T>(pixel_pitch);
        const T l = std::sqrt(du * du + dv * dv + mz * mz);
        len[i * r + j] = l;
        T* o = n.data() + (i * r + j) * 3;
        o[0] = -du / l;
        o[1] = -dv / l;
        o[2] = mz / l;
      }
    }
  });
  if (!should_record({&depth})) return out;
  record("normals_from_depth", {depth}, out, [depth, out, length, r, du_taps, dv_taps]() {
    dispatch(out.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = out.grad_span<T>();
      auto n = out.data<T>();
      auto len = length.data<T>();
      auto gd = depth.grad_span<T>();
      for (int i = 0; i < r; ++i) {
        int va, vb;
        double vw;
        dv_taps(i, va, vb, vw);
        for (int j = 0; j < r; ++j) {
          int ua, ub;
          double uw;
          du_taps(j, ua, ub, uw);
          const T* nn = n.data() + (i * r + j) * 3;
          const T* gg = g.data() + (i * r + j) * 3;
          const T proj = nn[0] * gg[0] + nn[1] * gg[1] + nn[2] * gg[2];
          const T l = len[i * r + j];
          // d(out)/d(m) = (I - n n^T) / |m| with m = (-du, -dv, s).
          const T gmx = (gg[0] - nn[0] * proj) / l;
          const T gmy = (gg[1] - nn[1] * proj) / l;
          const T gdu = -gmx * static_cast<T>(uw);
          const T gdv = -gmy * static_cast<T>(vw);
          gd[i * r + ua] += gdu;
          gd[i * r + ub] -= gdu;
          gd[va * r + j] += gdv;
          gd[vb * r + j] -= gdv;
        }
      }
    });
  });
  return out;
}

// ------------------------------------------------------------------- shading

Tensor light_direction(const Tensor& light) {
  if (light.numel() != 4) throw DimensionError("light must hold 4 values, got " + shape_str(light.shape()));
  Tensor out = Tensor::zeros({3}, light.dtype());
  const double lx = light.at(2), ly = light.at(3);
  const double r2 = lx * lx + ly * ly;
  const bool outside = r2 > 1.0;
  if (outside) {
    const double r = std::sqrt(r2);
    out.set(0, lx / r);
    out.set(1, ly / r);
    out.set(2, 0.0);
  } else {
    out.set(0, lx);
    out.set(1, ly);
    out.set(2, std::sqrt(1.0 - r2));
  }
  decisions::note(outside ? 1 : 0);
  if (!should_record({&light})) return out;
  record("light_direction", {light}, out, [light, out, lx, ly, r2, outside]() {
    const Tensor g = out.grad();
    const double g0 = g.at(0), g1 = g.at(1), g2 = g.at(2);
    double dlx, dly;
    if (outside) {
      const double r = std::sqrt(r2), r3 = r2 * r;
      dlx = g0 * (ly * ly / r3) - g1 * (lx * ly / r3);
      dly = -g0 * (lx * ly / r3) + g1 * (lx * lx / r3);
    } else {
      // lz floored so the derivative stays finite at the rim.
      const double lz = std::max(std::sqrt(1.0 - r2), 1e-6);
      dlx = g0 - g2 * lx / lz;
      dly = g1 - g2 * ly / lz;
    }
    dispatch(light.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto gl = light.grad_span<T>();
      gl[2] += static_cast<T>(dlx);
      gl[3] += static_cast<T>(dly);
    });
  });
  return out;
}

Tensor shade(const Tensor& albedo, const Tensor& normals, const Tensor& light) {
  if (albedo.rank() != 3 || albedo.dim(2) != 3 || normals.shape() != albedo.shape()) {
    throw DimensionError("shade: albedo " + shape_str(albedo.shape()) + ", normals " + shape_str(normals.shape()));
  }
  const int h = albedo.dim(0), w = albedo.dim(1);
  Tensor dir = light_direction(light);
  Tensor lambert = relu(sum(mul(normals, dir), 2));
  Tensor flat = reshape(light, {4});
  Tensor factor = add(mul(lambert, slice(flat, 0, 1, 1)), slice(flat, 0, 0, 1));
  return mul(albedo, reshape(factor, {h, w, 1}));
}

// ------------------------------------------------------------------- warping

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat3 rot_x(double a, bool deriv) {
  const double c = std::cos(a), s = std::sin(a);
  if (deriv) return {{{0, 0, 0}, {0, -s, -c}, {0, c, -s}}};
  return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
}
Mat3 rot_y(double a, bool deriv) {
  const double c = std::cos(a), s = std::sin(a);
  if (deriv) return {{{-s, 0, c}, {0, 0, 0}, {-c, 0, -s}}};
  return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
}
Mat3 rot_z(double a, bool deriv) {
  const double c = std::cos(a), s = std::sin(a);
  if (deriv) return {{{-s, -c, 0}, {c, -s, 0}, {0, 0, 0}}};
  return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
}

struct Pose {
  Mat3 rot_minus_identity;  // R - I
  std::array<Mat3, 3> d_rot;  // dR / d(pitch, yaw, roll)
  std::array<double, 3> t;
};

Pose make_pose(const std::array<double, 6>& v) {
  Pose p;
  const Mat3 rx = rot_x(v[0], false), ry = rot_y(v[1], false), rz = rot_z(v[2], false);
  Mat3 r = matmul3(matmul3(rx, ry), rz);
  for (int i = 0; i < 3; ++i) r[i][i] -= 1.0;
  p.rot_minus_identity = r;
  p.d_rot[0] = matmul3(matmul3(rot_x(v[0], true), ry), rz);
  p.d_rot[1] = matmul3(matmul3(rx, rot_y(v[1], true)), rz);
  p.d_rot[2] = matmul3(matmul3(rx, ry), rot_z(v[2], true));
  p.t = {v[3], v[4], v[5]};
  return p;
}

// Per-vertex projection state shared by forward and backward.
struct Vertex {
  int src;          // pixel whose depth and color the vertex carries
  double u, v;      // projected pixel coordinates
  double depth;     // distance along the view axis, for the Z-buffer
  double ray[3];    // lifted point = dist * ray
  double pw[3];     // transformed point
};

// Vertices sit on every pixel center plus a ring on the image border, so a
// flat canonical plane covers the full frame. Border vertices copy the nearest
// pixel. The lattice side is r + 2.
struct Raster {
  int r = 0;
  int n = 0;
  std::vector<Vertex> verts;
  std::vector<int> tri;          // per pixel, -1 when uncovered
  std::vector<double> bary;      // per pixel, 3 weights
};

// Triangle t of cell (ci, cj): t even = (ci,cj),(ci,cj+1),(ci+1,cj); odd = (ci,cj+1),(ci+1,cj+1),(ci+1,cj).
std::array<int, 3> triangle_vertices(int t, int n) {
  const int cell = t / 2, ci = cell / (n - 1), cj = cell % (n - 1);
  const int a = ci * n + cj;
  if (t % 2 == 0) return {a, a + 1, a + n};
  return {a + 1, a + n + 1, a + n};
}

// Lattice index -> pixel coordinate of the vertex and the pixel it copies.
double lattice_coord(int i, int r) { return i == 0 ? 0.0 : i == r + 1 ? static_cast<double>(r) : i - 0.5; }
int lattice_pixel(int i, int r) { return std::clamp(i - 1, 0, r - 1); }

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

template <class T>
Raster rasterize(std::span<const T> depth, const Pose& pose, const Camera& cam, int r) {
  Raster ras;
  ras.r = r;
  const int n = ras.n = r + 2;
  ras.verts.resize(static_cast<std::size_t>(n) * n);
  const double f = cam.focal(), c = cam.principal(), zc = cam.plane_distance;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      Vertex& vx = ras.verts[i * n + j];
      vx.src = lattice_pixel(i, r) * r + lattice_pixel(j, r);
      const double pu = lattice_coord(j, r), pv = lattice_coord(i, r);
      vx.ray[0] = (pu - c) / f;
      vx.ray[1] = -(pv - c) / f;
      vx.ray[2] = -1.0;
      const double dist = cam.distance(static_cast<double>(depth[vx.src]));
      const double p[3] = {dist * vx.ray[0], dist * vx.ray[1], dist * vx.ray[2]};
      const double rel[3] = {p[0], p[1], p[2] + zc};  // P - C
      for (int a = 0; a < 3; ++a) {
        double acc = 0;
        for (int b = 0; b < 3; ++b) acc += pose.rot_minus_identity[a][b] * rel[b];
        vx.pw[a] = p[a] + acc + pose.t[a];
      }
      // (u, v) + rho(P') - rho(P): exact at the identity pose.
      const double zt = -vx.pw[2], z0 = -p[2];
      vx.u = pu + f * (vx.pw[0] / zt - p[0] / z0);
      vx.v = pv - f * (vx.pw[1] / zt - p[1] / z0);
      vx.depth = zt;
    }
  }
  const std::size_t pixels = static_cast<std::size_t>(r) * r;
  ras.tri.assign(pixels, -1);
  ras.bary.assign(pixels * 3, 0.0);
  std::vector<double> zbuf(pixels, std::numeric_limits<double>::infinity());
  const int tris = 2 * (n - 1) * (n - 1);
  for (int t = 0; t < tris; ++t) {
    const auto vi = triangle_vertices(t, n);
    const Vertex &a = ras.verts[vi[0]], &b = ras.verts[vi[1]], &cc = ras.verts[vi[2]];
    if (!(a.depth > 0 && b.depth > 0 && cc.depth > 0)) continue;
    const double area = edge(a.u, a.v, b.u, b.v, cc.u, cc.v);
    if (area == 0.0 || !std::isfinite(area)) continue;
    const double minu = std::min({a.u, b.u, cc.u}), maxu = std::max({a.u, b.u, cc.u});
    const double minv = std::min({a.v, b.v, cc.v}), maxv = std::max({a.v, b.v, cc.v});
    const int x0 = std::max(0, static_cast<int>(std::ceil(minu - 0.5)));
    const int x1 = std::min(r - 1, static_cast<int>(std::floor(maxu - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(minv - 0.5)));
    const int y1 = std::min(r - 1, static_cast<int>(std::floor(maxv - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      const double py = y + 0.5;
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5;
        const double w0 = edge(b.u, b.v, cc.u, cc.v, px, py);
        const double w1 = edge(cc.u, cc.v, a.u, a.v, px, py);
        const double w2 = edge(a.u, a.v, b.u, b.v, px, py);
        const bool inside = area > 0 ? (w0 >= 0 && w1 >= 0 && w2 >= 0) : (w0 <= 0 && w1 <= 0 && w2 <= 0);
        if (!inside) continue;
        const double b0 = w0 / area, b1 = w1 / area, b2 = w2 / area;
        const double z = b0 * a.depth + b1 * b.depth + b2 * cc.depth;
        const std::size_t pix = static_cast<std::size_t>(y) * r + x;
        if (z < zbuf[pix]) {
          zbuf[pix] = z;
          ras.tri[pix] = t;
          ras.bary[pix * 3 + 0] = b0;
          ras.bary[pix * 3 + 1] = b1;
          ras.bary[pix * 3 + 2] = b2;
        }
      }
    }
  }
  return ras;
}

}  // namespace

WarpResult warp_to_view(const Tensor& color, const Tensor& depth, const Tensor& view, const Camera& camera) {
  camera.validate();
  const int r = depth.dim(0);
  if (depth.rank() != 2 || depth.dim(1) != r || r != camera.resolution || color.rank() != 3 || color.dim(0) != r ||
      color.dim(1) != r || color.dim(2) != 3 || view.numel() != 6) {
    throw DimensionError("warp_to_view: color " + shape_str(color.shape()) + ", depth " +
                         shape_str(depth.shape()) + ", view " + shape_str(view.shape()) + " for resolution " +
                         std::to_string(camera.resolution));
  }
  if (color.dtype() != depth.dtype() || view.dtype() != depth.dtype()) {
    throw ContractError("warp_to_view: mixed dtypes");
  }
  std::array<double, 6> v{};
  for (int i = 0; i < 6; ++i) v[i] = view.at(i);
  const Pose pose = make_pose(v);
  auto ras = std::make_shared<Raster>(dispatch(depth.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    return rasterize<T>(depth.data<T>(), pose, camera, r);
  }));

  WarpResult out;
  const std::size_t pixels = static_cast<std::size_t>(r) * r;
  out.image = Tensor::zeros({r, r, 3}, color.dtype());
  out.coverage = Tensor::zeros({r, r}, color.dtype());
  dispatch(color.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto c = color.data<T>();
    auto o = out.image.mutable_data<T>();
    auto cov = out.coverage.mutable_data<T>();
    for (std::size_t p = 0; p < pixels; ++p) {
      const int t = ras->tri[p];
      if (t < 0) {
        for (int ch = 0; ch < 3; ++ch) o[p * 3 + ch] = static_cast<T>(camera.background);
        continue;
      }
      cov[p] = T{1};
      const auto vi = triangle_vertices(t, ras->n);
      for (int ch = 0; ch < 3; ++ch) {
        T acc = 0;
        for (int k = 0; k < 3; ++k) {
          acc += static_cast<T>(ras->bary[p * 3 + k]) * c[ras->verts[vi[k]].src * 3 + ch];
        }
        o[p * 3 + ch] = acc;
      }
    }
  });
  if (decisions::enabled()) {
    for (int t : ras->tri) decisions::note(static_cast<std::uint64_t>(static_cast<std::int64_t>(t)));
  }
  if (!should_record({&color, &depth, &view})) return out;

  record("warp_to_view", {color, depth, view}, out.image, [color, depth, view, img = out.image, ras, pose, camera,
                                                           r]() {
    dispatch(img.dtype(), [&](auto tag) {
      using T = typename decltype(tag)::type;
      auto g = img.grad_span<T>();
      auto c = color.data<T>();
      const std::size_t pixels = static_cast<std::size_t>(r) * r;
      const std::size_t nv = ras->verts.size();
      std::vector<double> gu(nv, 0.0), gvv(nv, 0.0);
      std::span<T> gc;
      if (color.requires_grad()) gc = color.grad_span<T>();
      for (std::size_t p = 0; p < pixels; ++p) {
        const int t = ras->tri[p];
        if (t < 0) continue;
        const auto vi = triangle_vertices(t, ras->n);
        const double* b = &ras->bary[p * 3];
        double s[3] = {0, 0, 0};
        for (int k = 0; k < 3; ++k) {
          const int src = ras->verts[vi[k]].src;
          for (int ch = 0; ch < 3; ++ch) {
            const double gch = static_cast<double>(g[p * 3 + ch]);
            if (!gc.empty()) gc[src * 3 + ch] += static_cast<T>(b[k] * gch);
            s[k] += gch * static_cast<double>(c[src * 3 + ch]);
          }
        }
        // Barycentric derivatives with respect to the three vertex positions.
        const Vertex &A = ras->verts[vi[0]], &B = ras->verts[vi[1]], &C = ras->verts[vi[2]];
        const double px = static_cast<double>(p % r) + 0.5, py = static_cast<double>(p / r) + 0.5;
        const double area = edge(A.u, A.v, B.u, B.v, C.u, C.v);
        const double S = s[0] * b[0] + s[1] * b[1] + s[2] * b[2];
        // d(edge(a,b,p))/d(a) = (by - py, px - bx); d/d(b) = (py - ay, ax - px).
        double gx[3] = {0, 0, 0}, gy[3] = {0, 0, 0};
        auto add_edge = [&](double weight, int ia, const Vertex& a, int ib, const Vertex& bb) {
          gx[ia] += weight * (bb.v - py);
          gy[ia] += weight * (px - bb.u);
          gx[ib] += weight * (py - a.v);
          gy[ib] += weight * (a.u - px);
        };
        add_edge(s[0], 1, B, 2, C);
        add_edge(s[1], 2, C, 0, A);
        add_edge(s[2], 0, A, 1, B);
        // Area = edge(A, B, C).
        gx[0] += -S * (B.v - C.v);
        gy[0] += -S * (C.u - B.u);
        gx[1] += -S * (C.v - A.v);
        gy[1] += -S * (A.u - C.u);
        gx[2] += -S * (A.v - B.v);
        gy[2] += -S * (B.u - A.u);
        for (int k = 0; k < 3; ++k) {
          gu[vi[k]] += gx[k] / area;
          gvv[vi[k]] += gy[k] / area;
        }
      }
      if (!depth.requires_grad() && !view.requires_grad()) return;
      const double f = camera.focal(), zc = camera.plane_distance;
      std::span<T> gd;
      if (depth.requires_grad()) gd = depth.grad_span<T>();
      double gview[6] = {0, 0, 0, 0, 0, 0};
      for (std::size_t i = 0; i < nv; ++i) {
        if (gu[i] == 0.0 && gvv[i] == 0.0) continue;
        const Vertex& vx = ras->verts[i];
        const double zt = -vx.pw[2];
        // u = cx + f X / zt, v = cy - f Y / zt with zt = -Z.
        const double du_dX = f / zt, du_dZ = f * vx.pw[0] / (zt * zt);
        const double dv_dY = -f / zt, dv_dZ = -f * vx.pw[1] / (zt * zt);
        const double gX = gu[i] * du_dX, gY = gvv[i] * dv_dY, gZ = gu[i] * du_dZ + gvv[i] * dv_dZ;
        const double gP[3] = {gX, gY, gZ};
        if (!gd.empty()) {
          // P = dist * ray with d(dist)/d(depth) = -1; P' = R (P - C) + C + t.
          double acc = 0;
          for (int a = 0; a < 3; ++a) {
            double col = 0;
            for (int b = 0; b < 3; ++b) col += (pose.rot_minus_identity[a][b] + (a == b ? 1.0 : 0.0)) * vx.ray[b];
            acc += gP[a] * col;
          }
          gd[vx.src] += static_cast<T>(-acc);
        }
        if (view.requires_grad()) {
          const double dd = camera.distance(static_cast<double>(depth.data<T>()[vx.src]));
          const double pr[3] = {dd * vx.ray[0], dd * vx.ray[1], dd * vx.ray[2] + zc};
          for (int ang = 0; ang < 3; ++ang) {
            double acc = 0;
            for (int a = 0; a < 3; ++a) {
              double row = 0;
              for (int b = 0; b < 3; ++b) row += pose.d_rot[ang][a][b] * pr[b];
              acc += gP[a] * row;
            }
            gview[ang] += acc;
          }
          for (int a = 0; a < 3; ++a) gview[3 + a] += gP[a];
        }
      }
      if (view.requires_grad()) {
        auto gv = view.grad_span<T>();
        for (int a = 0; a < 6; ++a) gv[a] += static_cast<T>(gview[a]);
      }
    });
  });
  return out;
}

RenderResult render(const SceneAssembly& scene, const Camera& camera) {
  RenderResult out;
  out.normals = normals_from_depth(scene.depth, camera.pixel_pitch());
  out.canonical = shade(scene.albedo, out.normals, scene.light);
  WarpResult w = warp_to_view(out.canonical, scene.depth, scene.view, camera);
  out.image = w.image;
  out.coverage = w.coverage;

  Tensor fdepth = hflip(scene.depth);
  Tensor fshaded = shade(hflip(scene.albedo), normals_from_depth(fdepth, camera.pixel_pitch()), scene.light);
  WarpResult wf = warp_to_view(fshaded, fdepth, scene.view, camera);
  out.flipped = wf.image;
  out.flipped_coverage = wf.coverage;
  return out;
}

}  // namespace marrprobe::render
