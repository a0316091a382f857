#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "marrprobe/analysis/analysis.hpp"
#include "marrprobe/cli/cli.hpp"
#include "marrprobe/data/data.hpp"
#include "marrprobe/numerics/errors.hpp"
#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/serialize.hpp"
#include "marrprobe/render/image_io.hpp"
#include "marrprobe/render/render.hpp"
#include "marrprobe/train/fit.hpp"

namespace marrprobe::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using numerics::NamedTensor;
using numerics::Tensor;

namespace {

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("cannot parse " + path.string() + ": " + e.what());
  }
}

// A directory produced by an earlier run of the same command is replaced as a
// whole so stale files cannot survive into a rerun.
void prepare_output(const fs::path& dir, const char* marker) {
  if (fs::exists(dir)) {
    const bool empty = fs::is_directory(dir) && fs::is_empty(dir);
    if (!empty && !fs::exists(dir / marker)) {
      throw ConfigError("refusing to overwrite " + dir.string() + " (no " + marker + " from an earlier run)");
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    if (ec) throw IoError("cannot clear " + dir.string() + ": " + ec.message());
  }
  make_dirs(dir);
}

data::DatasetManifest open_dataset(const Settings& s) {
  const fs::path dir = s.path("dataset.dir");
  return data::read_manifest(fs::is_directory(dir) || !fs::exists(dir) ? dir / "manifest.json" : dir);
}

std::vector<double> level_weights(const Settings& s, const train::Model& model) {
  const auto names = train::level_names(model.levels().size());
  std::vector<double> w(names.size(), 0.0);
  for (const auto& l : s.list("model.levels")) {
    const auto it = std::find(names.begin(), names.end(), l);
    if (it == names.end()) throw ConfigError("unknown level '" + l + "'");
    w[static_cast<std::size_t>(it - names.begin())] = 1.0;
  }
  if (std::none_of(w.begin(), w.end(), [](double x) { return x > 0.0; })) throw ConfigError("no level selected");
  return w;
}

Tensor row(const Tensor& x, int k, numerics::Shape shape) { return numerics::reshape(numerics::slice(x, 0, k, 1), shape); }

void write_rgb(const fs::path& path, const Tensor& image) { render::write_ppm(path, render::to_rgb8(image)); }

std::string sample_name(const data::Record& r) { return fs::path(r.image).stem().string(); }

// "1 0 0 0" style text or a tensor record with four values.
Tensor read_light(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("light file not found: " + path.string());
  if (path.extension() == ".bin") {
    const auto t = numerics::load_tensors(path);
    if (t.size() != 1 || t[0].tensor.numel() != 4) throw ConfigError("light file " + path.string() + " must hold 4 values");
    return numerics::reshape(t[0].tensor, {4});
  }
  std::ifstream is(path);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    char* end = nullptr;
    const double x = std::strtod(tok.c_str(), &end);
    if (*end != '\0') throw ConfigError("light file " + path.string() + ": '" + tok + "' is not a number");
    v.push_back(x);
  }
  if (v.size() != 4) throw ConfigError("light file " + path.string() + " must hold 4 values (k_a k_d l_x l_y)");
  return Tensor::from_values({4}, v);
}

Tensor read_map(const fs::path& path, bool rgb, double lo, double hi) {
  if (!fs::exists(path)) throw ConfigError("input file not found: " + path.string());
  try {
    if (path.extension() == ".bin") {
      const auto t = numerics::load_tensors(path);
      if (t.size() != 1) throw ConfigError("expected one tensor in " + path.string());
      return t[0].tensor;
    }
    return rgb ? render::from_rgb8(render::read_ppm(path)) : render::read_pgm16(path, lo, hi);
  } catch (const IoError& e) {
    throw ConfigError(std::string("malformed input: ") + e.what());
  }
}

}  // namespace

void cmd_dataset(const Settings& s, std::ostream& log) {
  const fs::path dir = s.path("dataset.dir");
  const std::uint64_t seed = s.unsigned_integer("general.seed");
  const std::string single = s.str("dataset.single_view");
  std::vector<int> yaws = data::multi_view_yaws();
  if (single != "none") yaws = {s.integer("dataset.single_view")};

  data::DatasetManifest m =
      data::generate_synthetic(dir, s.integer("dataset.identities"), s.integer("dataset.size"), seed, yaws);
  if (single != "none") m = data::filter_single_view(m, yaws.front());
  m = data::split_by_identity(m, s.number("dataset.train_fraction"), seed);
  data::write_manifest(m, dir / "manifest.json");
  s.write_file(dir / "config.cfg");
  log << "dataset: " << m.records.size() << " images (" << m.indices(data::Split::train).size() << " train, "
      << m.indices(data::Split::test).size() << " test) from " << m.identities().size() << " identities -> "
      << dir.string() << '\n';
}

void cmd_train(const Settings& s, std::ostream& log) {
  const train::ModelConfig mc = train::ModelConfig::preset(s.str("model.preset"));
  mc.validate();
  const std::uint64_t seed = s.unsigned_integer("general.seed");
  train::Model model(mc, seed);

  train::TrainConfig tc;
  tc.lr = s.number("train.lr");
  tc.batch_size = s.integer("train.batch");
  tc.epochs = s.integer("train.epochs");
  tc.seed = seed;
  tc.level_weights = level_weights(s, model);
  tc.coverage = train::parse_coverage_mode(s.str("train.coverage"));
  tc.checkpoint_every = s.integer("train.checkpoint_every");
  tc.heldout = s.integer("train.heldout");
  tc.clip = s.number("train.clip");
  tc.validate();

  const data::DatasetManifest manifest = open_dataset(s);
  const fs::path run = s.path("train.run");
  prepare_output(run, "run.json");
  s.write_file(run / "config.cfg");
  log << "train: " << manifest.indices(data::Split::train).size() << " images, preset " << s.str("model.preset") << ", "
      << model.params().scalar_count() << " parameters -> " << run.string() << '\n';
  train::fit(model, manifest, tc, run, [&](const std::string& line) { log << line << '\n' << std::flush; });
  log << "train: wrote " << (run / "model.bin").string() << '\n';
}

void cmd_probe(const Settings& s, std::ostream& log) {
  const fs::path ckpt = s.str("probe.checkpoint").empty() ? s.path("train.run") : s.path("probe.checkpoint");
  if (!fs::exists(ckpt)) throw IoError("missing checkpoint " + ckpt.string());
  const train::Model model = train::load_model(ckpt);
  const data::DatasetManifest manifest = open_dataset(s);
  if (manifest.image_size != model.config().encoder.image_size) {
    throw ConfigError("dataset image size " + std::to_string(manifest.image_size) + " does not match the model input " +
                      std::to_string(model.config().encoder.image_size));
  }

  std::vector<std::size_t> idx;
  const std::string split = s.str("probe.split");
  if (split == "all") {
    for (std::size_t i = 0; i < manifest.records.size(); ++i) idx.push_back(i);
  } else {
    idx = manifest.indices(data::parse_split(split));
  }
  const int limit = s.integer("probe.limit");
  if (limit > 0 && idx.size() > static_cast<std::size_t>(limit)) idx.resize(static_cast<std::size_t>(limit));
  if (idx.empty()) throw ConfigError("split '" + split + "' has no images");

  const std::vector<double> weights = level_weights(s, model);
  const render::Camera cam = model.camera();
  const auto& dc = model.config().decoder;
  const fs::path out = s.path("probe.out");
  prepare_output(out, "index.json");

  json samples = json::array();
  std::vector<std::string> levels;
  const int size = manifest.image_size;
  const int r = dc.resolution;
  for (std::size_t i : idx) {
    const data::Record& rec = manifest.records[i];
    const std::string name = sample_name(rec);
    const Tensor image = numerics::reshape(data::load_batch(manifest, {i}), {size, size, 3});
    const train::ForwardResult f = model.forward(image, weights);
    const fs::path sdir = out / name;
    make_dirs(sdir);
    write_rgb(sdir / "input.ppm", f.target);
    numerics::save_tensors(sdir / "confidence.bin", {{"sigma", f.sigma}});

    levels.clear();
    for (const auto& lv : f.levels) {
      levels.push_back(lv.name);
      const fs::path ldir = sdir / ("level_" + lv.name);
      make_dirs(ldir);
      std::vector<double> assigned(lv.activation.assigned.begin(), lv.activation.assigned.end());
      const int dim = static_cast<int>(assigned.size());
      numerics::save_tensors(ldir / "assignment.bin",
                             {{"assignment", Tensor::from_values({dim}, assigned)}, {"theta", lv.activation.theta}});
      numerics::save_tensors(ldir / "assembly.bin", {{"masks", lv.scene.masks},
                                                     {"depth", lv.scene.depth},
                                                     {"albedo", lv.scene.albedo},
                                                     {"view", lv.scene.view},
                                                     {"light", lv.scene.light},
                                                     {"normals", lv.render.normals},
                                                     {"canonical", lv.render.canonical},
                                                     {"render", lv.render.image},
                                                     {"flipped", lv.render.flipped},
                                                     {"coverage", lv.render.coverage},
                                                     {"flipped_coverage", lv.render.flipped_coverage}});
      write_rgb(ldir / "render.ppm", lv.render.image);
      write_rgb(ldir / "flipped.ppm", lv.render.flipped);
      write_rgb(ldir / "canonical.ppm", lv.render.canonical);
      write_rgb(ldir / "albedo.ppm", lv.scene.albedo);
      render::write_pgm16(ldir / "depth.pgm", lv.scene.depth, dc.depth_min, dc.depth_max);
      render::write_pgm16(ldir / "coverage.pgm", lv.render.coverage, 0.0, 1.0);

      for (int k = 0; k < lv.probes.count(); ++k) {
        const fs::path pdir = ldir / ("probe_" + std::to_string(k));
        make_dirs(pdir);
        const Tensor depth = row(lv.probes.depth, k, {r, r});
        const Tensor albedo = row(lv.probes.albedo, k, {r, r, 3});
        const Tensor mask = row(lv.scene.masks, k, {r, r});
        numerics::save_tensors(pdir / "probe.bin", {{"depth", depth},
                                                    {"albedo", albedo},
                                                    {"view", row(lv.probes.view, k, {6})},
                                                    {"light", row(lv.probes.light, k, {4})},
                                                    {"mask", mask}});
        render::write_pgm16(pdir / "depth.pgm", depth, dc.depth_min, dc.depth_max);
        write_rgb(pdir / "albedo.ppm", albedo);
        render::write_pgm16(pdir / "mask.pgm", mask, 0.0, 1.0);
      }
    }
    samples.push_back({{"name", name}, {"image", rec.image}, {"identity", rec.identity}, {"yaw", rec.yaw},
                       {"pitch", rec.pitch}, {"split", data::split_name(rec.split)}});
  }

  const json index = {{"checkpoint", s.str("probe.checkpoint").empty() ? s.str("train.run") : s.str("probe.checkpoint")},
                      {"dataset", s.str("dataset.dir")},
                      {"split", split},
                      {"levels", levels},
                      {"resolution", r},
                      {"depth_range", {dc.depth_min, dc.depth_max}},
                      {"pixel_pitch", cam.pixel_pitch()},
                      {"samples", samples}};
  s.write_file(out / "config.cfg");
  write_text(out / "index.json", index.dump(1) + "\n");
  log << "probe: " << idx.size() << " samples x " << levels.size() << " levels -> " << out.string() << '\n';
}

void cmd_analyze(const Settings& s, std::ostream& log) {
  const fs::path dumps = s.str("analyze.dumps").empty() ? s.path("probe.out") : s.path("analyze.dumps");
  if (!fs::exists(dumps / "index.json")) throw IoError("missing probe dumps: " + (dumps / "index.json").string());
  const json index = read_json(dumps / "index.json");

  static const std::vector<std::string> kReports{"variations", "distributions", "yaw", "tuning", "summary", "emergence"};
  std::set<std::string> reports;
  for (const auto& r : s.list("analyze.report")) {
    if (r == "all") {
      reports.insert(kReports.begin(), kReports.end());
    } else if (std::find(kReports.begin(), kReports.end(), r) != kReports.end()) {
      reports.insert(r);
    } else {
      throw ConfigError("unknown report '" + r + "'");
    }
  }
  if (reports.empty()) throw ConfigError("no report selected");

  analysis::LevelThresholds th;
  th.depth_3d = s.number("analyze.depth_threshold");
  th.normal_25d = s.number("analyze.normal_threshold");
  th.validate();
  analysis::VariationOptions vo;
  std::vector<std::string> levels;
  try {
    vo.depth_min = index.at("depth_range").at(0).get<double>();
    vo.depth_max = index.at("depth_range").at(1).get<double>();
    vo.pixel_pitch = index.at("pixel_pitch").get<double>();
    levels = index.at("levels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError("malformed " + (dumps / "index.json").string() + ": " + e.what());
  }
  vo.use_coverage = s.boolean("analyze.coverage_mask");

  std::vector<analysis::VariationRecord> records;
  std::vector<analysis::TuningRecord> tuning;
  std::map<std::string, std::vector<double>> yaws;
  for (const auto& sample : index.at("samples")) {
    const std::string name = sample.at("name").get<std::string>();
    const double gt_yaw = sample.at("yaw").get<double>();
    for (const auto& lv : levels) {
      const fs::path file = dumps / name / ("level_" + lv) / "assembly.bin";
      if (!fs::exists(file)) throw IoError("missing probe dump " + file.string());
      std::map<std::string, Tensor> t;
      for (auto& nt : numerics::load_tensors(file, numerics::DType::f64)) t[nt.name] = nt.tensor;
      for (const char* key : {"depth", "masks", "view", "coverage"}) {
        if (!t.count(key)) throw IoError(file.string() + " has no '" + key + "' tensor");
      }
      records.push_back(analysis::variations(t["depth"], vo, t["coverage"], name, lv));
      yaws[lv].push_back(t["view"].at(1));
      const auto intensity = analysis::activation_intensity(t["masks"]);
      for (std::size_t k = 0; k < intensity.size(); ++k) {
        tuning.push_back({lv, static_cast<int>(k), intensity[k], gt_yaw});
      }
    }
  }
  if (records.empty()) throw IoError("probe dumps under " + dumps.string() + " hold no samples");

  const fs::path out = s.path("analyze.out");
  prepare_output(out, "config.cfg");
  s.write_file(out / "config.cfg");

  if (reports.count("variations")) {
    std::ostringstream os;
    analysis::write_variations_csv(os, records);
    write_text(out / "variations.csv", os.str());
  }
  if (reports.count("distributions")) {
    std::vector<double> depth_edges, normal_edges;
    for (int i = 0; i <= 20; ++i) depth_edges.push_back(2e-3 * i);
    for (int i = 0; i <= 20; ++i) normal_edges.push_back(5e-3 * i);
    for (const auto& lv : levels) {
      std::vector<analysis::VariationRecord> mine;
      for (const auto& r : records) {
        if (r.level == lv) mine.push_back(r);
      }
      for (auto f : {analysis::Field::depth_var, analysis::Field::nx_var, analysis::Field::ny_var, analysis::Field::nz_var}) {
        const auto h = analysis::distribution(mine, f, f == analysis::Field::depth_var ? depth_edges : normal_edges);
        std::ostringstream os;
        os << analysis::kVariationNote << '\n';
        h.write_csv(os, lv + "." + analysis::field_name(f));
        write_text(out / ("distribution_" + lv + "_" + analysis::field_name(f) + ".csv"), os.str());
      }
    }
  }
  if (reports.count("yaw")) {
    for (const auto& lv : levels) {
      std::ostringstream os;
      analysis::yaw_distribution(yaws[lv]).write_csv(os, lv + ".yaw_deg");
      write_text(out / ("yaw_" + lv + ".csv"), os.str());
    }
  }
  if (reports.count("tuning")) {
    std::ostringstream os;
    analysis::view_bin_report(tuning).write_csv(os);
    write_text(out / "tuning.csv", os.str());
  }
  const auto summary = analysis::summarize(records, th);
  if (reports.count("summary")) write_text(out / "summary.json", analysis::to_json(summary).dump(1) + "\n");
  for (const auto& [lv, sm] : summary) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "analyze: %-5s depth_var %.4e nz_var %.4e -> %s (%zu samples)", lv.c_str(),
                  sm.mean_depth_var, sm.mean_normal_var[2], analysis::representation_name(sm.cls), sm.samples);
    log << buf << '\n';
  }
  if (reports.count("emergence")) {
    const std::string top = std::find(levels.begin(), levels.end(), "high") != levels.end() ? "high" : levels.back();
    std::vector<analysis::VariationRecord> high;
    for (const auto& r : records) {
      if (r.level == top) high.push_back(r);
    }
    const auto v = analysis::emergence_verdict(high, th);
    const json j = {{"level", top},
                    {"verdict", v.emerged ? "emerged" : "not emerged"},
                    {"emerged", v.emerged},
                    {"mean_depth_var", v.mean_depth_var},
                    {"threshold", v.threshold},
                    {"samples", high.size()}};
    write_text(out / "emergence.json", j.dump(1) + "\n");
    char buf[200];
    std::snprintf(buf, sizeof buf, "analyze: emergence (%s) mean depth_var %.4e vs %.4g -> %s", top.c_str(),
                  v.mean_depth_var, v.threshold, v.emerged ? "emerged" : "not emerged");
    log << buf << '\n';
  }
  log << "analyze: " << records.size() << " records -> " << out.string() << '\n';
}

void cmd_render_debug(const Settings& s, std::ostream& log) {
  if (s.str("render.albedo").empty()) throw ConfigError("render-debug needs an albedo input (--albedo)");
  const Tensor albedo = read_map(s.path("render.albedo"), true, 0.0, 1.0);
  if (albedo.rank() != 3 || albedo.dim(2) != 3 || albedo.dim(0) != albedo.dim(1)) {
    throw ConfigError("albedo must be square [R, R, 3], got " + numerics::shape_str(albedo.shape()));
  }
  const int r = albedo.dim(0);
  const Tensor depth = s.str("render.depth").empty() ? Tensor::full({r, r}, 1.0, albedo.dtype())
                                                      : read_map(s.path("render.depth"), false, 0.9, 1.1);
  if (depth.shape() != numerics::Shape{r, r}) {
    throw ConfigError("depth must be [" + std::to_string(r) + ", " + std::to_string(r) + "] to match the albedo, got " +
                      numerics::shape_str(depth.shape()));
  }
  const Tensor light = s.str("render.light").empty() ? Tensor::from_values({4}, {0.5, 0.5, 0.0, 0.0})
                                                      : read_light(s.path("render.light"));
  const double deg = std::numbers::pi / 180.0;
  const Tensor view = Tensor::from_values({6}, {s.number("render.pitch") * deg, s.number("render.yaw") * deg,
                                                s.number("render.roll") * deg, s.number("render.tx"),
                                                s.number("render.ty"), s.number("render.tz")});

  render::SceneAssembly scene;
  scene.masks = Tensor::full({1, r, r}, 1.0, albedo.dtype());
  scene.depth = depth.to(albedo.dtype());
  scene.albedo = albedo;
  scene.view = view.to(albedo.dtype());
  scene.light = light.to(albedo.dtype());
  scene.winner.assign(static_cast<std::size_t>(r) * r, 0);
  render::Camera cam;
  cam.resolution = r;
  const render::RenderResult res = render::render(scene, cam);

  const fs::path out = s.path("render.out");
  make_dirs(out);
  write_rgb(out / "render.ppm", res.image);
  render::write_pgm16(out / "coverage.pgm", res.coverage, 0.0, 1.0);
  double covered = 0.0;
  for (double c : res.coverage.values()) covered += c;
  log << "render-debug: " << covered << " of " << r * r << " pixels covered -> " << out.string() << '\n';
}

}  // namespace marrprobe::cli
