#include "marrprobe/data/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "marrprobe/numerics/rng.hpp"
#include "marrprobe/render/image_io.hpp"
#include "marrprobe/render/render.hpp"

namespace marrprobe::data {

using numerics::DType;
using numerics::Rng;

namespace {

constexpr double kBackgroundDepth = 0.92;
constexpr double kDepthLo = 0.9, kDepthHi = 1.1;
constexpr std::array<double, 3> kBackgroundAlbedo{0.3, 0.32, 0.35};
constexpr double kBlobGain = 6.0;
// Per-pixel Gaussian sensor noise on the written images. Without it the
// background fill and flat backdrop are matched exactly, and the confidence
// floor turns those pixels into the dominant term of the loss.
constexpr double kPixelNoise = 0.02;
constexpr std::uint64_t kNoiseStream = 1000;

Tensor add_sensor_noise(Tensor image, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < image.numel(); ++i) {
    image.set(i, std::clamp(image.at(i) + kPixelNoise * rng.normal(), 0.0, 1.0));
  }
  return image;
}

std::string identity_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id%03d", id);
  return buf;
}

std::string image_name(int id, int yaw) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "id%03d_yaw%+03d.ppm", id, yaw);
  return buf;
}

}  // namespace

HeadSpec HeadSpec::sample(std::uint64_t seed) {
  Rng rng(seed);
  HeadSpec h;
  h.seed = seed;
  h.radii = {rng.uniform(0.52, 0.68), rng.uniform(0.7, 0.86), rng.uniform(0.07, 0.11)};
  const double tone = rng.uniform(0.45, 0.9);
  h.base_color = {tone, tone * rng.uniform(0.7, 0.85), tone * rng.uniform(0.55, 0.75)};
  h.bump = rng.uniform(0.008, 0.022);

  const double eye_x = rng.uniform(0.2, 0.3), eye_y = rng.uniform(0.12, 0.25), eye_s = rng.uniform(0.05, 0.08);
  const double dark = rng.uniform(0.05, 0.25);
  const std::array<double, 3> eye{dark, dark, dark * 1.2};
  h.blobs.push_back({-eye_x, eye_y, eye_s, eye});
  h.blobs.push_back({eye_x, eye_y, eye_s, eye});
  const double red = rng.uniform(0.5, 0.75);
  h.blobs.push_back({0.0, -rng.uniform(0.35, 0.5), rng.uniform(0.06, 0.1), {red, 0.25, 0.25}});
  if (rng.uniform() < 0.5) {
    h.blobs.push_back({0.0, -rng.uniform(0.0, 0.1), 0.06, {tone * 0.95, tone * 0.6, tone * 0.55}});
  }
  return h;
}

bool HeadSpec::symmetric() const {
  for (const Blob& b : blobs) {
    if (b.cx == 0.0) continue;
    const bool mirrored = std::any_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
      return o.cx == -b.cx && o.cy == b.cy && o.sigma == b.sigma && o.color == b.color;
    });
    if (!mirrored) return false;
  }
  return true;
}

void HeadSpec::validate() const {
  for (double r : radii) {
    if (!(r > 0)) throw ConfigError("head radii must be positive");
  }
  auto in_unit = [](const std::array<double, 3>& c) {
    return std::all_of(c.begin(), c.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  };
  if (!in_unit(base_color)) throw ConfigError("head base color outside [0, 1]");
  for (const Blob& b : blobs) {
    if (!in_unit(b.color)) throw ConfigError("blob color outside [0, 1]");
    if (!(b.sigma > 0)) throw ConfigError("blob sigma must be positive");
  }
  if (kBackgroundDepth + radii[2] + std::max(0.0, bump) > kDepthHi) throw ConfigError("head relief exceeds depth range");
}

HeadMaps head_maps(const HeadSpec& spec, int size) {
  spec.validate();
  if (size < 4 || size % 4 != 0) throw ConfigError("image size must be a positive multiple of 4, got " + std::to_string(size));
  HeadMaps m;
  m.depth = Tensor::zeros({size, size}, DType::f64);
  m.albedo = Tensor::zeros({size, size, 3}, DType::f64);
  auto d = m.depth.mutable_data<double>();
  auto a = m.albedo.mutable_data<double>();
  const auto [rx, ry, relief] = spec.radii;
  for (int i = 0; i < size; ++i) {
    // Integer numerators keep mirrored pixels at exactly negated coordinates.
    const double y = static_cast<double>(size - 1 - 2 * i) / size;
    for (int j = 0; j < size; ++j) {
      const double x = static_cast<double>(2 * j + 1 - size) / size;
      const std::size_t p = static_cast<std::size_t>(i) * size + j;
      const double q = (x / rx) * (x / rx) + (y / ry) * (y / ry);
      if (q >= 1.0) {
        d[p] = kBackgroundDepth;
        for (int c = 0; c < 3; ++c) a[p * 3 + c] = kBackgroundAlbedo[c];
        continue;
      }
      const double nose = spec.bump * std::exp(-(x * x + (y + 0.05) * (y + 0.05)) / (2 * 0.12 * 0.12));
      d[p] = kBackgroundDepth + relief * std::sqrt(1.0 - q) + nose * (1.0 - q);
      // Normalized blend rather than sequential mixing: with the mirrored pair
      // first in the list, (w_l + w_r) + ... rounds identically on both sides.
      std::array<double, 3> acc{};
      double total = 0.0;
      for (const Blob& b : spec.blobs) {
        const double w = kBlobGain * std::exp(-((x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy)) / (2 * b.sigma * b.sigma));
        total += w;
        for (int c = 0; c < 3; ++c) acc[c] += w * b.color[c];
      }
      for (int c = 0; c < 3; ++c) a[p * 3 + c] = (spec.base_color[c] + acc[c]) / (1.0 + total);
    }
  }
  return m;
}

std::array<double, 4> generation_light() { return {0.4, 0.6, 0.0, 0.35}; }

Tensor render_head(const HeadMaps& maps, double yaw_degrees) {
  render::Camera cam;
  cam.resolution = maps.depth.dim(0);
  render::SceneAssembly s;
  s.depth = maps.depth;
  s.albedo = maps.albedo;
  s.view = Tensor::from_values({6}, {0, yaw_degrees * std::numbers::pi / 180.0, 0, 0, 0, 0}, DType::f64);
  const auto l = generation_light();
  s.light = Tensor::from_values({4}, {l[0], l[1], l[2], l[3]}, DType::f64);
  return render::render(s, cam).image;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::test:
      return "test";
    default:
      return "none";
  }
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "none") return Split::none;
  throw ConfigError("unknown split tag '" + s + "'");
}

std::vector<int> DatasetManifest::identities() const {
  std::set<int> ids;
  for (const Record& r : records) ids.insert(r.identity);
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(i);
  return out;
}

std::vector<int> multi_view_yaws() {
  std::vector<int> y;
  for (int a = -90; a <= 90; a += 15) y.push_back(a);
  return y;
}

DatasetManifest generate_synthetic(const std::filesystem::path& dir, int n_identities, int size, std::uint64_t seed,
                                   const std::vector<int>& yaws) {
  if (n_identities < 2) throw ConfigError("need at least 2 identities, got " + std::to_string(n_identities));
  if (size < 4 || size % 4 != 0) throw ConfigError("image size must be a positive multiple of 4, got " + std::to_string(size));
  if (yaws.empty()) throw ConfigError("empty yaw set");
  for (int y : yaws) {
    if (y < -90 || y > 90) throw ConfigError("yaw " + std::to_string(y) + " outside [-90, 90]");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.generator_seed = seed;
  m.image_size = size;
  m.yaws = yaws;
  m.root = dir;
  for (int id = 0; id < n_identities; ++id) {
    const HeadSpec spec = HeadSpec::sample(Rng::derive(seed, static_cast<std::uint64_t>(id)));
    const HeadMaps maps = head_maps(spec, size);
    const std::string stem = identity_stem(id);
    render::write_pgm16(dir / (stem + "_depth.pgm"), maps.depth, kDepthLo, kDepthHi);
    render::write_ppm(dir / (stem + "_albedo.ppm"), render::to_rgb8(maps.albedo));
    for (int yaw : yaws) {
      Record r;
      r.image = image_name(id, yaw);
      r.depth = stem + "_depth.pgm";
      r.albedo = stem + "_albedo.ppm";
      r.identity = id;
      r.yaw = yaw;
      const std::uint64_t noise_seed =
          Rng::derive(Rng::derive(seed, static_cast<std::uint64_t>(id)), kNoiseStream + static_cast<std::uint64_t>(yaw + 90));
      render::write_ppm(dir / r.image, render::to_rgb8(add_sensor_noise(render_head(maps, yaw), noise_seed)));
      m.records.push_back(std::move(r));
    }
  }
  write_manifest(m, dir / "manifest.json");
  return m;
}

DatasetManifest split_by_identity(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie in (0, 1), got " + std::to_string(train_fraction));
  }
  std::vector<int> ids = manifest.identities();
  const auto n = ids.size();
  const auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  if (n_train == 0 || n_train >= n) {
    throw ConfigError("train fraction " + std::to_string(train_fraction) + " with " + std::to_string(n) +
                      " identities leaves a split empty");
  }
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  const std::set<int> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  DatasetManifest out = manifest;
  for (Record& r : out.records) r.split = train.count(r.identity) ? Split::train : Split::test;
  return out;
}

DatasetManifest filter_single_view(const DatasetManifest& manifest, int yaw) {
  DatasetManifest out = manifest;
  out.records.clear();
  for (const Record& r : manifest.records)
    if (r.yaw == yaw) out.records.push_back(r);
  if (out.records.empty()) throw ConfigError("no records at yaw " + std::to_string(yaw));
  out.yaws = {yaw};
  return out;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json recs = nlohmann::json::array();
  for (const Record& r : m.records) {
    recs.push_back({{"image", r.image},
                    {"depth", r.depth},
                    {"albedo", r.albedo},
                    {"identity", r.identity},
                    {"yaw", r.yaw},
                    {"pitch", r.pitch},
                    {"split", split_name(r.split)}});
  }
  return {{"generator_seed", m.generator_seed}, {"image_size", m.image_size}, {"yaws", m.yaws}, {"records", recs}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    m.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    m.image_size = j.at("image_size").get<int>();
    m.yaws = j.at("yaws").get<std::vector<int>>();
    for (const auto& e : j.at("records")) {
      Record r;
      r.image = e.at("image").get<std::string>();
      r.depth = e.value("depth", std::string());
      r.albedo = e.value("albedo", std::string());
      r.identity = e.at("identity").get<int>();
      r.yaw = e.at("yaw").get<int>();
      r.pitch = e.value("pitch", 0);
      r.split = parse_split(e.value("split", std::string("none")));
      m.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json(m).dump(1) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse manifest " + path.string() + ": " + e.what());
  }
  return manifest_from_json(j, path.parent_path());
}

Tensor load_batch(const DatasetManifest& m, const std::vector<std::size_t>& indices, DType dtype) {
  const int s = m.image_size;
  Tensor out = Tensor::zeros({static_cast<int>(indices.size()), s, s, 3}, dtype);
  const std::size_t per = static_cast<std::size_t>(s) * s * 3;
  numerics::dispatch(dtype, [&](auto tag) {
    using T = typename decltype(tag)::type;
    auto o = out.mutable_data<T>();
    for (std::size_t b = 0; b < indices.size(); ++b) {
      if (indices[b] >= m.records.size()) {
        throw ContractError("record index " + std::to_string(indices[b]) + " out of range");
      }
      const auto path = m.root / m.records[indices[b]].image;
      const render::Rgb8 img = render::read_ppm(path);
      if (img.width != s || img.height != s) {
        throw IoError(path.string() + ": expected " + std::to_string(s) + "x" + std::to_string(s) + ", got " +
                      std::to_string(img.width) + "x" + std::to_string(img.height));
      }
      for (std::size_t i = 0; i < per; ++i) o[b * per + i] = static_cast<T>(img.pixels[i] / 255.0);
    }
  });
  return out;
}

}  // namespace marrprobe::data
