#include "marrprobe/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>

#include "marrprobe/render/render.hpp"

namespace marrprobe::analysis {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Two-pass population variance, shifted by the first entry so constant
// inputs give exactly zero.
double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double shift = v.front();
  double mean = 0.0;
  for (double x : v) mean += x - shift;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - shift - mean) * (x - shift - mean);
  return acc / static_cast<double>(v.size());
}

}  // namespace

VariationRecord variations(const Tensor& depth, const VariationOptions& options, const Tensor& coverage,
                           std::string sample, std::string level) {
  if (depth.rank() != 2 || depth.dim(0) != depth.dim(1)) {
    throw DimensionError("variations expects square [R,R] depth, got " + numerics::shape_str(depth.shape()));
  }
  if (!(options.depth_max > options.depth_min)) throw ConfigError("variations: depth_max must exceed depth_min");
  const std::size_t n = depth.numel();
  if (options.use_coverage && (!coverage.defined() || coverage.shape() != depth.shape())) {
    throw DimensionError("variations: coverage must match depth when masking is enabled");
  }
  const Tensor normals = render::normals_from_depth(depth.to(numerics::DType::f64), options.pixel_pitch);
  std::vector<double> d, nx, ny, nz;
  const double span = options.depth_max - options.depth_min;
  for (std::size_t p = 0; p < n; ++p) {
    if (options.use_coverage && coverage.at(p) <= 0.5) continue;
    d.push_back((depth.at(p) - options.depth_min) / span);
    nx.push_back(normals.at(p * 3));
    ny.push_back(normals.at(p * 3 + 1));
    nz.push_back(normals.at(p * 3 + 2));
  }
  VariationRecord r;
  r.sample = std::move(sample);
  r.level = std::move(level);
  r.depth_var = variance(d);
  r.n_var = {variance(nx), variance(ny), variance(nz)};
  return r;
}

void LevelThresholds::validate() const {
  if (!(depth_3d > 0) || !(normal_25d > 0)) throw ConfigError("classification thresholds must be positive");
}

const char* representation_name(Representation r) {
  switch (r) {
    case Representation::full3d:
      return "3D";
    case Representation::surface25d:
      return "2.5D";
    default:
      return "2D";
  }
}

Representation classify_level(const VariationRecord& record, const LevelThresholds& t) {
  if (record.depth_var >= t.depth_3d) return Representation::full3d;
  if (record.n_var[2] >= t.normal_25d) return Representation::surface25d;
  return Representation::flat2d;
}

const char* field_name(Field f) {
  switch (f) {
    case Field::depth_var:
      return "depth_var";
    case Field::nx_var:
      return "nx_var";
    case Field::ny_var:
      return "ny_var";
    default:
      return "nz_var";
  }
}

double field_value(const VariationRecord& r, Field f) {
  switch (f) {
    case Field::depth_var:
      return r.depth_var;
    case Field::nx_var:
      return r.n_var[0];
    case Field::ny_var:
      return r.n_var[1];
    default:
      return r.n_var[2];
  }
}

std::size_t Histogram::total() const {
  std::size_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

void Histogram::write_csv(std::ostream& os, const std::string& label) const {
  os << "label,bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << label << ',' << num(edges[i]) << ',' << num(edges[i + 1]) << ',' << counts[i] << '\n';
  }
  os << label << ",mean,," << num(mean) << '\n';
  os << label << ",median,," << num(median) << '\n';
}

Histogram histogram(const std::vector<double>& values, const std::vector<double>& edges) {
  if (values.empty()) throw ContractError("empty distribution");
  if (edges.size() < 2) throw ConfigError("histogram needs at least two edges");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ConfigError("histogram edges must increase strictly");
  }
  Histogram h;
  h.edges = edges;
  h.counts.assign(edges.size() - 1, 0);
  for (double v : values) {
    // upper_bound gives the first edge above v; bin = that index - 1.
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::ptrdiff_t bin = (it - edges.begin()) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(h.counts.size()) - 1);
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  h.mean = sum / static_cast<double>(values.size());
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size() / 2;
  h.median = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
  return h;
}

Histogram distribution(const std::vector<VariationRecord>& records, Field field, const std::vector<double>& edges) {
  std::vector<double> v;
  v.reserve(records.size());
  for (const auto& r : records) v.push_back(field_value(r, field));
  return histogram(v, edges);
}

std::vector<double> yaw_bin_edges() {
  std::vector<double> e;
  for (int a = -90; a <= 90; a += 5) e.push_back(a);
  return e;
}

Histogram yaw_distribution(const std::vector<double>& yaw_radians) {
  std::vector<double> deg;
  deg.reserve(yaw_radians.size());
  for (double y : yaw_radians) {
    // Snap away the radian round trip so 30 degrees stays in [30, 35).
    deg.push_back(std::round(y * 180.0 / std::numbers::pi * 1e9) / 1e9);
  }
  return histogram(deg, yaw_bin_edges());
}

std::vector<double> activation_intensity(const Tensor& masks) {
  if (masks.rank() != 3 || masks.dim(1) != masks.dim(2)) {
    throw DimensionError("activation_intensity expects [K,R,R], got " + numerics::shape_str(masks.shape()));
  }
  const int k = masks.dim(0);
  const std::size_t px = static_cast<std::size_t>(masks.dim(1)) * masks.dim(2);
  std::vector<double> sums(k, 0.0);
  for (std::size_t p = 0; p < px; ++p) {
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      const double m = masks.at(i * px + p);
      if (m != 0.0 && m != 1.0) throw ContractError("masks must be binary");
      total += m;
      sums[i] += m;
    }
    if (total != 1.0) throw ContractError("masks do not partition pixel " + std::to_string(p));
  }
  for (double& s : sums) s /= static_cast<double>(px);
  return sums;
}

const std::vector<YawBin>& view_bins() {
  static const std::vector<YawBin> bins{{-60, -35}, {-35, -5}, {-5, 5}, {5, 35}, {35, 60}};
  return bins;
}

int view_bin_index(double yaw) {
  const auto& b = view_bins();
  for (std::size_t i = 0; i < b.size(); ++i) {
    const bool last = i + 1 == b.size();
    if (yaw >= b[i].lo && (yaw < b[i].hi || (last && yaw <= b[i].hi))) return static_cast<int>(i);
  }
  return -1;
}

void ViewBinReport::write_csv(std::ostream& os) const {
  os << "level,probe,bin_lo,bin_hi,mean_intensity,count\n";
  for (const auto& [level, probes] : cells) {
    for (const auto& [k, bins] : probes) {
      for (std::size_t b = 0; b < bins.size(); ++b) {
        os << level << ',' << k << ',' << num(view_bins()[b].lo) << ',' << num(view_bins()[b].hi) << ','
           << num(bins[b].mean()) << ',' << bins[b].count << '\n';
      }
    }
  }
  os << "# out_of_range," << out_of_range << '\n';
}

ViewBinReport view_bin_report(const std::vector<TuningRecord>& records) {
  ViewBinReport r;
  for (const auto& t : records) {
    const int b = view_bin_index(t.yaw);
    if (b < 0) {
      ++r.out_of_range;
      continue;
    }
    auto& bins = r.cells[t.level][t.probe];
    if (bins.empty()) bins.resize(view_bins().size());
    bins[b].sum += t.intensity;
    ++bins[b].count;
  }
  return r;
}

EmergenceVerdict emergence_verdict(const std::vector<VariationRecord>& high, const LevelThresholds& t) {
  EmergenceVerdict v;
  v.threshold = t.depth_3d;
  if (!high.empty()) {
    double s = 0.0;
    for (const auto& r : high) s += r.depth_var;
    v.mean_depth_var = s / static_cast<double>(high.size());
  }
  v.emerged = v.mean_depth_var >= t.depth_3d;
  return v;
}

std::map<std::string, LevelSummary> summarize(const std::vector<VariationRecord>& records,
                                              const LevelThresholds& thresholds) {
  std::map<std::string, LevelSummary> out;
  for (const auto& r : records) {
    LevelSummary& s = out[r.level];
    s.mean_depth_var += r.depth_var;
    for (int a = 0; a < 3; ++a) s.mean_normal_var[a] += r.n_var[a];
    ++s.samples;
  }
  for (auto& [level, s] : out) {
    const double n = static_cast<double>(s.samples);
    s.mean_depth_var /= n;
    for (double& v : s.mean_normal_var) v /= n;
    VariationRecord mean{"", level, s.mean_depth_var, s.mean_normal_var};
    s.cls = classify_level(mean, thresholds);
  }
  return out;
}

nlohmann::json to_json(const std::map<std::string, LevelSummary>& summary) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [level, s] : summary) {
    j[level] = {{"mean_depth_var", s.mean_depth_var},
                {"mean_normal_var", s.mean_normal_var},
                {"class", representation_name(s.cls)},
                {"samples", s.samples}};
  }
  return j;
}

void write_variations_csv(std::ostream& os, const std::vector<VariationRecord>& records) {
  os << kVariationNote << '\n' << "sample,level,depth_var,nx_var,ny_var,nz_var\n";
  for (const auto& r : records) {
    os << r.sample << ',' << r.level << ',' << num(r.depth_var) << ',' << num(r.n_var[0]) << ',' << num(r.n_var[1])
       << ',' << num(r.n_var[2]) << '\n';
  }
}

}  // namespace marrprobe::analysis
