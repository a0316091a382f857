#pragma once

#include "marrprobe/numerics/tensor.hpp"
#include "marrprobe/probes/probes.hpp"

namespace marrprobe::render {

using numerics::Tensor;

// Pinhole camera looking down -z. The canonical depth plane (stored depth 1)
// sits at distance plane_distance and exactly fills the frame, so the metric
// pixel pitch there is 2 * half_width / resolution.
struct Camera {
  int resolution = 64;
  double half_width = 0.125;
  double plane_distance = 1.0;
  double background = 0.5;

  double focal() const { return 0.5 * resolution * plane_distance / half_width; }
  double principal() const { return 0.5 * resolution; }
  double pixel_pitch() const { return 2.0 * half_width / resolution; }
  // Camera distance of a surface with stored depth d (larger d = nearer).
  double distance(double d) const { return plane_distance - (d - 1.0); }
  void validate() const;
};

struct SceneAssembly {
  Tensor masks;   // [K, R, R], exactly one 1 per pixel (constant)
  Tensor depth;   // [R, R]
  Tensor albedo;  // [R, R, 3]
  Tensor view;    // [6]
  Tensor light;   // [4]
  std::vector<int> winner;  // per pixel, row-major
};

// Per-pixel Z-buffer competition across probes: the largest depth wins, ties
// go to the lowest index. Masks are frozen constants in backward.
SceneAssembly assemble(const probes::ProbeBatch& probes);

// depth [R, R] -> unit normals [R, R, 3]. u runs along columns, v up the rows.
Tensor normals_from_depth(const Tensor& depth, double pixel_pitch);

// light [4] = (k_a, k_d, l_x, l_y) -> unit direction [3]. (l_x, l_y) outside
// the unit disk is projected onto its boundary.
Tensor light_direction(const Tensor& light);

// albedo * (k_a + k_d * max(0, n . l)).
Tensor shade(const Tensor& albedo, const Tensor& normals, const Tensor& light);

struct WarpResult {
  Tensor image;     // [R, R, 3]
  Tensor coverage;  // [R, R], 1 where some triangle covers the pixel center
};

// Lifts every canonical pixel to 3D through its depth, rotates about the
// object center (0, 0, -plane_distance) by Rx(pitch) Ry(yaw) Rz(roll),
// translates, projects, and rasterizes the two-triangles-per-cell mesh with a
// Z-buffer. Triangle assignment is frozen in backward.
WarpResult warp_to_view(const Tensor& color, const Tensor& depth, const Tensor& view, const Camera& camera);

struct RenderResult {
  Tensor image, flipped;
  Tensor coverage, flipped_coverage;
  Tensor canonical;  // shaded canonical image before warping
  Tensor normals;
};

RenderResult render(const SceneAssembly& scene, const Camera& camera);

}  // namespace marrprobe::render
