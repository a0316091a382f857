#include "marrprobe/cli/cli.hpp"

#include <cstdlib>
#include <deque>
#include <functional>
#include <ostream>

#include "CLI11.hpp"
#include "marrprobe/numerics/errors.hpp"

namespace marrprobe::cli {

namespace {

// Flag -> settings key bindings; values are applied after the config file.
class Bindings {
 public:
  void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    store_.emplace_back();
    items_.push_back({app->add_option(flag, store_.back(), help), key, false});
  }
  void flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    store_.emplace_back();
    items_.push_back({app->add_flag(flag, help), key, true});
  }
  void apply(Settings& s) const {
    std::size_t i = 0;
    for (const auto& it : items_) {
      const std::string& v = store_[i++];
      if (it.opt->count() == 0) continue;
      s.set(it.key, it.boolean ? "true" : v);
    }
  }

 private:
  struct Item {
    CLI::Option* opt;
    std::string key;
    bool boolean;
  };
  std::deque<std::string> store_;
  std::vector<Item> items_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Graphics-probe analysis of a window transformer on synthetic heads", "marrprobe"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_file;
  Bindings b;
  app.add_option("--config", config_file, "key = value settings file with [section] headers");
  b.option(&app, "--out-root", "general.out_root", "Root for relative paths (env MARRPROBE_OUT)");
  b.option(&app, "--seed", "general.seed", "Seed for generation, splitting, init and shuffling");

  CLI::App* ds = app.add_subcommand("dataset", "Generate the synthetic head dataset");
  b.option(ds, "--dir", "dataset.dir", "Dataset directory");
  b.option(ds, "--identities", "dataset.identities", "Number of identities");
  b.option(ds, "--size", "dataset.size", "Image side in pixels");
  b.option(ds, "--train-fraction", "dataset.train_fraction", "Share of identities in the train split");
  b.option(ds, "--single-view", "dataset.single_view", "Keep only this yaw (degrees)");

  CLI::App* tr = app.add_subcommand("train", "Train a model and record per-epoch statistics");
  b.option(tr, "--dataset", "dataset.dir", "Dataset directory or manifest");
  b.option(tr, "--run", "train.run", "Run directory");
  b.option(tr, "--preset", "model.preset", "Model preset: desk, tiny or paper");
  b.option(tr, "--levels", "model.levels", "Levels trained, comma separated (low,mid,high)");
  b.option(tr, "--epochs", "train.epochs", "Epochs");
  b.option(tr, "--lr", "train.lr", "Learning rate");
  b.option(tr, "--batch", "train.batch", "Batch size");
  b.option(tr, "--coverage", "train.coverage", "Uncovered pixels: penalize or ignore");
  b.option(tr, "--checkpoint-every", "train.checkpoint_every", "Checkpoint cadence in epochs (0: final only)");
  b.option(tr, "--heldout", "train.heldout", "Test images used for per-epoch stats (0: all)");
  b.option(tr, "--clip", "train.clip", "Global gradient-norm clip");

  CLI::App* pr = app.add_subcommand("probe", "Dump probes, assemblies and renders for a split");
  b.option(pr, "--run", "train.run", "Run directory holding model.json and model.bin");
  b.option(pr, "--checkpoint", "probe.checkpoint", "Checkpoint file (overrides the run's model.bin)");
  b.option(pr, "--dataset", "dataset.dir", "Dataset directory or manifest");
  b.option(pr, "--split", "probe.split", "train, test or all");
  b.option(pr, "--out", "probe.out", "Dump directory");
  b.option(pr, "--limit", "probe.limit", "At most this many images (0: all)");
  b.option(pr, "--levels", "model.levels", "Levels dumped, comma separated");

  CLI::App* an = app.add_subcommand("analyze", "Variation, yaw, tuning and emergence reports from dumps");
  b.option(an, "--dumps", "analyze.dumps", "Probe dump directory");
  b.option(an, "--out", "analyze.out", "Report directory");
  b.flag(an, "--coverage-mask", "analyze.coverage_mask", "Restrict variations to covered pixels");
  b.option(an, "--report", "analyze.report", "Reports: all or a list of variations,distributions,yaw,tuning,summary,emergence");
  b.option(an, "--depth-threshold", "analyze.depth_threshold", "Depth variance threshold for 3D");
  b.option(an, "--normal-threshold", "analyze.normal_threshold", "z-normal variance threshold for 2.5D");

  CLI::App* rd = app.add_subcommand("render-debug", "Render hand-specified depth/albedo/view/light");
  b.option(rd, "--depth", "render.depth", "Depth PGM (16-bit, [0.9, 1.1]) or tensor file; flat when omitted");
  b.option(rd, "--albedo", "render.albedo", "Albedo PPM or tensor file");
  b.option(rd, "--light", "render.light", "Light file: k_a k_d l_x l_y");
  b.option(rd, "--out", "render.out", "Output directory");
  b.option(rd, "--pitch", "render.pitch", "Pitch in degrees");
  b.option(rd, "--yaw", "render.yaw", "Yaw in degrees");
  b.option(rd, "--roll", "render.roll", "Roll in degrees");
  b.option(rd, "--tx", "render.tx", "Translation x");
  b.option(rd, "--ty", "render.ty", "Translation y");
  b.option(rd, "--tz", "render.tz", "Translation z");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    Settings s = Settings::defaults();
    if (!config_file.empty()) s.load_file(config_file);
    if (const char* env = std::getenv("MARRPROBE_OUT"); env && *env) s.set("general.out_root", env);
    b.apply(s);

    const std::pair<CLI::App*, std::function<void(const Settings&, std::ostream&)>> commands[] = {
        {ds, cmd_dataset}, {tr, cmd_train}, {pr, cmd_probe}, {an, cmd_analyze}, {rd, cmd_render_debug}};
    for (const auto& [sub, fn] : commands) {
      if (sub->parsed()) fn(s, out);
    }
    return kOk;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace marrprobe::cli
