#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "marrprobe/analysis/analysis.hpp"
#include "marrprobe/data/data.hpp"
#include "marrprobe/train/model.hpp"
#include "marrprobe/train/optim.hpp"

namespace marrprobe::train {

struct TrainConfig {
  double lr = 3e-4;
  int batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 7;
  std::vector<double> level_weights{1.0, 1.0, 1.0};
  CoverageMode coverage = CoverageMode::penalize;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int heldout = 16;          // test images used for per-epoch stats; 0 = all
  double clip = 5.0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepMetrics {
  double loss = 0.0;
  double grad_norm = 0.0;
  std::vector<std::string> levels;
  std::vector<double> level_terms;  // batch means of the unweighted terms
};

// Forward and backward per image (gradients of the batch mean), then one Adam
// update. A non-finite loss or gradient throws NumericalError naming the first
// offending tensor; parameters are left untouched in that case.
StepMetrics train_step(Model& model, const Tensor& batch, Adam& optimizer, const TrainConfig& config);

struct EpochStats {
  int epoch = 0;
  std::string level;
  double mean_depth_var = 0.0;
  std::array<double, 3> mean_n_var{};
  double mean_loss = 0.0;
};

void write_stats_csv(std::ostream& os, const std::vector<EpochStats>& stats);

// Per-level variation records of the hard forward pass over `images`
// [B, S, S, 3]; sample names come from `names` when given.
std::vector<analysis::VariationRecord> evaluate_variations(const Model& model, const Tensor& images,
                                                           const std::vector<double>& level_weights = {},
                                                           const std::vector<std::string>& names = {});

struct FitResult {
  std::vector<EpochStats> stats;
  std::filesystem::path checkpoint;
};

// Trains on the train split and writes, under run_dir:
//   run.json (resolved configuration), model.json, stats.csv,
//   checkpoints/epoch_NNN.bin, model.bin (final weights).
FitResult fit(Model& model, const data::DatasetManifest& manifest, const TrainConfig& config,
              const std::filesystem::path& run_dir, const std::function<void(const std::string&)>& log = {});

void save_model(const Model& model, const std::filesystem::path& dir);
// `path` is a run directory (model.json + model.bin) or a checkpoint file
// whose run directory holds model.json.
Model load_model(const std::filesystem::path& path);

}  // namespace marrprobe::train
