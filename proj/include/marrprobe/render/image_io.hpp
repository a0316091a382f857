#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::render {

// 8-bit RGB raster, row-major, interleaved.
struct Rgb8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;
};

// [H, W, 3] in [0, 1] -> bytes; values are clamped, then rounded to nearest.
Rgb8 to_rgb8(const numerics::Tensor& image);
numerics::Tensor from_rgb8(const Rgb8& img, numerics::DType dtype = numerics::default_dtype());

void write_ppm(const std::filesystem::path& path, const Rgb8& img);
Rgb8 read_ppm(const std::filesystem::path& path);

// Binary P5 with maxval 65535, big-endian samples. `map` [H, W] is mapped
// linearly from [lo, hi] to [0, 65535] with clamping.
void write_pgm16(const std::filesystem::path& path, const numerics::Tensor& map, double lo, double hi);
// Returns values mapped back into [lo, hi].
numerics::Tensor read_pgm16(const std::filesystem::path& path, double lo, double hi,
                            numerics::DType dtype = numerics::default_dtype());

}  // namespace marrprobe::render
