#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::data {

using numerics::Tensor;

// Darker or tinted gaussian spot on the albedo (eye, mouth, nose-tip analogues).
struct Blob {
  double cx = 0, cy = 0;  // frame coordinates in [-1, 1], y up
  double sigma = 0.1;
  std::array<double, 3> color{};
};

struct HeadSpec {
  std::uint64_t seed = 0;
  // Horizontal and vertical semi-axes in frame units, then depth relief in
  // stored-depth units.
  std::array<double, 3> radii{0.6, 0.78, 0.09};
  std::array<double, 3> base_color{0.8, 0.6, 0.5};
  std::vector<Blob> blobs;
  double bump = 0.015;  // nose bump height

  // Mirror-symmetric head: one eye pair, a mouth and optionally a nose tint.
  static HeadSpec sample(std::uint64_t seed);
  bool symmetric() const;
  void validate() const;
};

// Canonical ground truth of a head at size x size.
struct HeadMaps {
  Tensor depth;   // [S, S], within [0.9, 1.1]
  Tensor albedo;  // [S, S, 3]
};

HeadMaps head_maps(const HeadSpec& spec, int size);
// Renders the head turned by yaw (degrees) under the fixed generation light.
Tensor render_head(const HeadMaps& maps, double yaw_degrees);

// Lighting used for every generated image: frontal, tilted overhead.
std::array<double, 4> generation_light();

enum class Split { none, train, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct Record {
  std::string image;   // relative to the manifest directory
  std::string depth;   // canonical depth PGM of the identity
  std::string albedo;  // canonical albedo PPM of the identity
  int identity = 0;
  int yaw = 0;
  int pitch = 0;
  Split split = Split::none;
};

struct DatasetManifest {
  std::vector<Record> records;
  std::uint64_t generator_seed = 0;
  int image_size = 64;
  std::vector<int> yaws;
  std::filesystem::path root;  // directory the paths are relative to; not serialized

  std::vector<int> identities() const;  // sorted, unique
  std::vector<std::size_t> indices(Split s) const;
};

// 0, +-15, ..., +-90 in ascending order.
std::vector<int> multi_view_yaws();

// Writes per-identity ground truth and one PPM per (identity, yaw) under dir,
// plus manifest.json. Images carry seeded Gaussian pixel noise (std 0.02);
// render_head itself is noise-free. Identity ids are 0..n-1.
DatasetManifest generate_synthetic(const std::filesystem::path& dir, int n_identities, int size, std::uint64_t seed,
                                   const std::vector<int>& yaws = multi_view_yaws());

DatasetManifest split_by_identity(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed);
DatasetManifest filter_single_view(const DatasetManifest& manifest, int yaw);

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);
void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

// [B, S, S, 3] in [0, 1].
Tensor load_batch(const DatasetManifest& m, const std::vector<std::size_t>& indices,
                  numerics::DType dtype = numerics::default_dtype());

}  // namespace marrprobe::data
