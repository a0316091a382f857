#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::analysis {

using numerics::Tensor;

// "Variation" is the population variance. Every CSV written here carries
// this line first.
inline constexpr const char* kVariationNote = "# variation = population variance (depth normalized to [0,1])";

struct VariationRecord {
  std::string sample;
  std::string level;
  double depth_var = 0.0;
  std::array<double, 3> n_var{};  // x, y, z
};

struct VariationOptions {
  double depth_min = 0.9;
  double depth_max = 1.1;
  double pixel_pitch = 2.0 * 0.125 / 64;  // metric pitch used for the normals
  bool use_coverage = false;              // restrict to covered pixels
};

// depth [R, R]; coverage [R, R] (only read when options.use_coverage).
VariationRecord variations(const Tensor& depth, const VariationOptions& options = {}, const Tensor& coverage = {},
                           std::string sample = {}, std::string level = {});

struct LevelThresholds {
  double depth_3d = 15e-3;
  double normal_25d = 10e-3;
  void validate() const;
};

enum class Representation { flat2d, surface25d, full3d };
const char* representation_name(Representation r);  // "2D", "2.5D", "3D"
Representation classify_level(const VariationRecord& record, const LevelThresholds& thresholds = {});

enum class Field { depth_var, nx_var, ny_var, nz_var };
const char* field_name(Field f);
double field_value(const VariationRecord& r, Field f);

// Bins are [e_i, e_{i+1}), the last one closed. Values outside the edges land
// in the first or last bin so counts always sum to the sample count.
struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
  double mean = 0.0;
  double median = 0.0;
  std::size_t total() const;
  void write_csv(std::ostream& os, const std::string& label) const;
};

Histogram histogram(const std::vector<double>& values, const std::vector<double>& edges);
Histogram distribution(const std::vector<VariationRecord>& records, Field field, const std::vector<double>& edges);

// Yaw component (radians) of the averaged view per sample -> 5 degree bins
// over [-90, 90].
std::vector<double> yaw_bin_edges();
Histogram yaw_distribution(const std::vector<double>& yaw_radians);

// masks [K, R, R] forming a partition -> share of pixels won by each probe.
std::vector<double> activation_intensity(const Tensor& masks);

struct TuningRecord {
  std::string level;
  int probe = 0;
  double intensity = 0.0;
  double yaw = 0.0;  // ground-truth dataset yaw, degrees
};

struct YawBin {
  double lo, hi;
};
// [-60,-35], [-35,-5], [-5,5], [5,35], [35,60]; lower edges inclusive,
// upper edges exclusive except the last.
const std::vector<YawBin>& view_bins();
int view_bin_index(double yaw_degrees);  // -1 when outside every bin

struct ViewBinReport {
  struct Cell {
    double sum = 0.0;
    std::size_t count = 0;
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  };
  // level -> probe -> bin
  std::map<std::string, std::map<int, std::vector<Cell>>> cells;
  std::size_t out_of_range = 0;
  void write_csv(std::ostream& os) const;
};

ViewBinReport view_bin_report(const std::vector<TuningRecord>& records);

struct EmergenceVerdict {
  bool emerged = false;
  double mean_depth_var = 0.0;
  double threshold = 15e-3;
};

EmergenceVerdict emergence_verdict(const std::vector<VariationRecord>& high_level, const LevelThresholds& thresholds = {});

struct LevelSummary {
  double mean_depth_var = 0.0;
  std::array<double, 3> mean_normal_var{};
  Representation cls = Representation::flat2d;
  std::size_t samples = 0;
};

// Averages per level, then classifies the averaged record.
std::map<std::string, LevelSummary> summarize(const std::vector<VariationRecord>& records,
                                              const LevelThresholds& thresholds = {});
nlohmann::json to_json(const std::map<std::string, LevelSummary>& summary);

void write_variations_csv(std::ostream& os, const std::vector<VariationRecord>& records);

}  // namespace marrprobe::analysis
