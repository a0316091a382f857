#include "marrprobe/render/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace marrprobe::render {

using namespace numerics;

Rgb8 to_rgb8(const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3) throw DimensionError("to_rgb8 expects [H,W,3], got " + shape_str(image.shape()));
  Rgb8 out;
  out.height = image.dim(0);
  out.width = image.dim(1);
  out.pixels.resize(image.numel());
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double v = std::clamp(image.at(i), 0.0, 1.0);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Tensor from_rgb8(const Rgb8& img, DType dtype) {
  Tensor t = Tensor::zeros({img.height, img.width, 3}, dtype);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t.set(i, img.pixels[i] / 255.0);
  return t;
}

namespace {

std::string read_token(std::istream& is) {
  std::string tok;
  while (is) {
    const int c = is.peek();
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  is >> tok;
  return tok;
}

void read_header(std::istream& is, const char* magic, int& width, int& height, int& maxval,
                 const std::filesystem::path& path) {
  if (read_token(is) != magic) throw IoError(path.string() + ": expected " + magic + " file");
  try {
    width = std::stoi(read_token(is));
    height = std::stoi(read_token(is));
    maxval = std::stoi(read_token(is));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed header");
  }
  if (width <= 0 || height <= 0) throw IoError(path.string() + ": bad dimensions");
  is.get();  // single whitespace before the raster
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Rgb8& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Rgb8 read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Rgb8 img;
  int maxval = 0;
  read_header(is, "P6", img.width, img.height, maxval, path);
  if (maxval != 255) throw IoError(path.string() + ": only 8-bit PPM is supported");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(is.gcount()) != img.pixels.size()) throw IoError(path.string() + ": truncated raster");
  return img;
}

void write_pgm16(const std::filesystem::path& path, const Tensor& map, double lo, double hi) {
  if (map.rank() != 2) throw DimensionError("write_pgm16 expects [H,W], got " + shape_str(map.shape()));
  if (!(hi > lo)) throw ContractError("write_pgm16: hi must exceed lo");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n65535\n";
  std::vector<std::uint8_t> bytes(map.numel() * 2);
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double v = std::clamp((map.at(i) - lo) / (hi - lo), 0.0, 1.0);
    const auto q = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    bytes[2 * i] = static_cast<std::uint8_t>(q >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

Tensor read_pgm16(const std::filesystem::path& path, double lo, double hi, DType dtype) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  int w = 0, h = 0, maxval = 0;
  read_header(is, "P5", w, h, maxval, path);
  if (maxval != 65535) throw IoError(path.string() + ": only 16-bit PGM is supported");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h * 2);
  is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(is.gcount()) != bytes.size()) throw IoError(path.string() + ": truncated raster");
  Tensor t = Tensor::zeros({h, w}, dtype);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const int q = (bytes[2 * i] << 8) | bytes[2 * i + 1];
    t.set(i, lo + (hi - lo) * (q / 65535.0));
  }
  return t;
}

}  // namespace marrprobe::render
