#include "marrprobe/train/fit.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "marrprobe/numerics/ops.hpp"
#include "marrprobe/numerics/tape.hpp"

namespace marrprobe::train {

using namespace numerics;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (epochs < 0) throw ConfigError("epoch count must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint cadence must be non-negative");
  if (heldout < 0) throw ConfigError("held-out count must be non-negative");
  bool any = false;
  for (double w : level_weights) {
    if (!(w >= 0.0)) throw ConfigError("level weights must be non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("at least one level weight must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"level_weights", c.level_weights},
          {"coverage", coverage_mode_name(c.coverage)},
          {"checkpoint_every", c.checkpoint_every},
          {"heldout", c.heldout},
          {"clip", c.clip},
          {"adam", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr = j.at("lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.epochs = j.at("epochs").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.level_weights = j.at("level_weights").get<std::vector<double>>();
    c.coverage = parse_coverage_mode(j.at("coverage").get<std::string>());
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.heldout = j.at("heldout").get<int>();
    c.clip = j.at("clip").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

[[noreturn]] void report_nonfinite(const Model& model, const LossResult& r, double loss) {
  std::string where;
  if (!all_finite(r.forward.sigma)) where = "confidence map sigma";
  for (std::size_t i = 0; where.empty() && i < r.forward.levels.size(); ++i) {
    const auto& lv = r.forward.levels[i];
    const std::pair<const char*, const Tensor*> parts[] = {
        {"theta", &lv.activation.theta}, {"depth", &lv.probes.depth}, {"albedo", &lv.probes.albedo},
        {"view", &lv.probes.view},       {"light", &lv.probes.light}, {"render", &lv.render.image},
        {"flipped render", &lv.render.flipped}};
    for (const auto& [name, t] : parts) {
      if (!all_finite(*t)) {
        where = lv.name + " " + name;
        break;
      }
    }
    if (where.empty() && !all_finite(r.terms[i])) where = lv.name + " loss term";
  }
  for (const auto& e : model.params().entries()) {
    if (!where.empty()) break;
    if (!all_finite(e.tensor)) where = "parameter " + e.name;
  }
  if (where.empty()) where = "total loss";
  throw NumericalError("non-finite loss " + std::to_string(loss) + "; first non-finite tensor: " + where);
}

Tensor item(const Tensor& batch, int b) {
  const int s = batch.dim(1);
  return reshape(slice(batch, 0, b, 1), {s, s, 3}).detach();
}

std::string epoch_file(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03d.bin", epoch);
  return buf;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(1) << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

StepMetrics train_step(Model& model, const Tensor& batch, Adam& optimizer, const TrainConfig& config) {
  if (batch.rank() != 4 || batch.dim(0) < 1) {
    throw DimensionError("train_step expects [B,S,S,3], got " + shape_str(batch.shape()));
  }
  const int n = batch.dim(0);
  LossOptions opt;
  opt.level_weights = config.level_weights;
  opt.coverage = config.coverage;
  model.params().zero_grad();
  StepMetrics m;
  for (int b = 0; b < n; ++b) {
    Tape tape;
    LossResult r;
    {
      TapeScope scope(tape);
      r = model.loss(item(batch, b), opt);
      const double loss = r.total.item();
      if (!std::isfinite(loss)) report_nonfinite(model, r, loss);
      Tensor scaled = scale(r.total, 1.0 / n);
      backward(scaled, tape);
    }
    m.loss += r.total.item() / n;
    if (m.levels.empty()) {
      m.levels = r.names;
      m.level_terms.assign(r.terms.size(), 0.0);
    }
    for (std::size_t i = 0; i < r.terms.size(); ++i) m.level_terms[i] += r.terms[i].item() / n;
  }
  for (const auto& e : model.params().entries()) {
    if (e.tensor.has_grad() && !all_finite(e.tensor.grad())) {
      throw NumericalError("non-finite gradient; first non-finite tensor: gradient of " + e.name);
    }
  }
  optimizer.config().lr = config.lr;
  optimizer.config().clip = config.clip;
  m.grad_norm = optimizer.step();
  return m;
}

void write_stats_csv(std::ostream& os, const std::vector<EpochStats>& stats) {
  os << analysis::kVariationNote << '\n' << "epoch,level,mean_depth_var,mean_nx_var,mean_ny_var,mean_nz_var,mean_loss\n";
  char buf[256];
  for (const auto& s : stats) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.10g,%.10g,%.10g,%.10g,%.10g\n", s.epoch, s.level.c_str(), s.mean_depth_var,
                  s.mean_n_var[0], s.mean_n_var[1], s.mean_n_var[2], s.mean_loss);
    os << buf;
  }
}

std::vector<analysis::VariationRecord> evaluate_variations(const Model& model, const Tensor& images,
                                                           const std::vector<double>& level_weights,
                                                           const std::vector<std::string>& names) {
  std::vector<analysis::VariationRecord> out;
  analysis::VariationOptions vo;
  vo.depth_min = model.config().decoder.depth_min;
  vo.depth_max = model.config().decoder.depth_max;
  vo.pixel_pitch = model.camera().pixel_pitch();
  for (int b = 0; b < images.dim(0); ++b) {
    const ForwardResult f = model.forward(item(images, b), level_weights);
    const std::string sample = names.empty() ? std::to_string(b) : names.at(b);
    for (const auto& lv : f.levels) out.push_back(analysis::variations(lv.scene.depth, vo, {}, sample, lv.name));
  }
  return out;
}

void save_model(const Model& model, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "model.json", to_json(model.config()));
  save_tensors(dir / "model.bin", model.params().entries());
}

Model load_model(const fs::path& path) {
  const fs::path dir = fs::is_directory(path) ? path : path.parent_path().parent_path();
  const fs::path weights = fs::is_directory(path) ? path / "model.bin" : path;
  fs::path cfg_path = dir / "model.json";
  if (!fs::exists(cfg_path)) cfg_path = weights.parent_path() / "model.json";
  std::ifstream is(cfg_path);
  if (!is) throw IoError("cannot open model config " + cfg_path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cannot parse " + cfg_path.string() + ": " + e.what());
  }
  if (!fs::exists(weights)) throw IoError("missing checkpoint " + weights.string());
  Model model(model_config_from_json(j), 0);
  model.params().load(load_tensors(weights));
  return model;
}

FitResult fit(Model& model, const data::DatasetManifest& manifest, const TrainConfig& config, const fs::path& run_dir,
              const std::function<void(const std::string&)>& log) {
  config.validate();
  if (config.level_weights.size() != model.levels().size()) {
    throw ConfigError("expected " + std::to_string(model.levels().size()) + " level weights, got " +
                      std::to_string(config.level_weights.size()));
  }
  const auto train_idx = manifest.indices(data::Split::train);
  auto test_idx = manifest.indices(data::Split::test);
  if (train_idx.empty()) throw ConfigError("empty train split");
  if (test_idx.empty()) throw ConfigError("empty test split");
  if (config.heldout > 0 && test_idx.size() > static_cast<std::size_t>(config.heldout)) test_idx.resize(config.heldout);
  if (manifest.image_size != model.config().encoder.image_size) {
    throw ConfigError("dataset image size " + std::to_string(manifest.image_size) + " does not match the model input " +
                      std::to_string(model.config().encoder.image_size));
  }

  std::error_code ec;
  fs::create_directories(run_dir / "checkpoints", ec);
  if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
  write_json(run_dir / "run.json", {{"model", to_json(model.config())},
                                    {"train", to_json(config)},
                                    {"dataset", (manifest.root / "manifest.json").string()},
                                    {"train_images", train_idx.size()},
                                    {"heldout_images", test_idx.size()}});
  write_json(run_dir / "model.json", to_json(model.config()));

  const Tensor heldout = data::load_batch(manifest, test_idx);
  Adam adam(model.params(), {config.lr, 0.9, 0.999, 1e-8, config.clip});
  FitResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng rng(Rng::derive(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<std::string> names;
    std::vector<double> term_sums;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const StepMetrics m = train_step(model, data::load_batch(manifest, idx), adam, config);
      if (names.empty()) {
        names = m.levels;
        term_sums.assign(names.size(), 0.0);
      }
      for (std::size_t i = 0; i < names.size(); ++i) term_sums[i] += m.level_terms[i];
      ++batches;
    }

    const auto records = evaluate_variations(model, heldout, config.level_weights);
    for (std::size_t i = 0; i < names.size(); ++i) {
      EpochStats s;
      s.epoch = epoch;
      s.level = names[i];
      std::size_t count = 0;
      for (const auto& r : records) {
        if (r.level != s.level) continue;
        s.mean_depth_var += r.depth_var;
        for (int a = 0; a < 3; ++a) s.mean_n_var[a] += r.n_var[a];
        ++count;
      }
      if (count) {
        s.mean_depth_var /= static_cast<double>(count);
        for (double& v : s.mean_n_var) v /= static_cast<double>(count);
      }
      s.mean_loss = term_sums[i] / static_cast<double>(batches);
      result.stats.push_back(s);
      if (log) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "epoch %d %-5s loss %.5f depth_var %.4e nz_var %.4e", epoch, s.level.c_str(),
                      s.mean_loss, s.mean_depth_var, s.mean_n_var[2]);
        log(buf);
      }
    }
    {
      std::ofstream os(run_dir / "stats.csv");
      if (!os) throw IoError("cannot write " + (run_dir / "stats.csv").string());
      write_stats_csv(os, result.stats);
    }
    if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      save_tensors(run_dir / "checkpoints" / epoch_file(epoch), model.params().entries());
    }
  }
  save_tensors(run_dir / "model.bin", model.params().entries());
  result.checkpoint = run_dir / "model.bin";
  if (config.epochs == 0) {
    std::ofstream os(run_dir / "stats.csv");
    write_stats_csv(os, result.stats);
  }
  return result;
}

}  // namespace marrprobe::train
