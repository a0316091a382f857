#pragma once

#include <vector>

#include "marrprobe/numerics/layers.hpp"
#include "marrprobe/wint/config.hpp"

namespace marrprobe::wint {

using numerics::Tensor;

struct TokenGrid {
  Tensor tokens;  // [side, side, D]
  std::size_t stage = 0;
  int side() const { return tokens.dim(0); }
};

struct WindowSet {
  Tensor windows;  // [n_windows, M (+1 when probed), D]
  int window_side = 0;
  int grid_side = 0;
  bool has_probe = false;
  int window_count() const { return windows.dim(0); }
  int visual_tokens() const { return window_side * window_side; }
};

// image [H, H, 3] -> [H/patch, H/patch, D]; patches flattened row, column, channel.
TokenGrid patch_embed(const Tensor& image, int patch, const numerics::Linear& proj, const Tensor& pos_embed);

WindowSet window_partition(const TokenGrid& grid, int window_side);
TokenGrid window_unpartition(const WindowSet& set, std::size_t stage);

// Appends one copy of seed [D] to every window.
WindowSet insert_probes(const WindowSet& set, const Tensor& seed);
// Probe tokens [n_windows, D] in row-major window order; `visual` receives the
// set with the probe slot removed.
Tensor harvest_probes(const WindowSet& set, WindowSet* visual = nullptr);

// 2x2 neighbor concatenation (order: (0,0), (1,0), (0,1), (1,1) as (row, col)
// offsets) followed by a bias-free projection 4D -> 2D.
TokenGrid patch_merge(const TokenGrid& grid, const numerics::Linear& reduction);

struct BlockParams {
  numerics::LayerNorm norm1, norm2;
  numerics::Linear q, k, v, out;
  numerics::Linear fc1, fc2;
  int heads = 1;

  static BlockParams create(numerics::ParamSet& params, const std::string& name, int dim, int heads,
                            int mlp_ratio, numerics::Rng& rng);
  // 12 D^2 + 13 D for mlp_ratio 4; general form computed from widths.
  static std::size_t parameter_count(int dim, int mlp_ratio);
};

// Pre-norm MHSA within each window followed by the MLP, both residual.
// windows: [n, T, D]. When attn_trace is non-null it receives the attention
// weights [n * heads, T, T].
Tensor wint_block(const Tensor& windows, const BlockParams& p, Tensor* attn_trace = nullptr);

struct EncodeResult {
  std::vector<std::size_t> probed_stages;
  std::vector<Tensor> probes;  // per probed stage, [n_windows, D_stage]
  TokenGrid final_grid;
};

class Encoder {
 public:
  Encoder(const WintConfig& config, numerics::Rng& rng);

  EncodeResult encode(const Tensor& image) const;

  const WintConfig& config() const noexcept { return config_; }
  const numerics::ParamSet& params() const noexcept { return params_; }
  numerics::ParamSet& params() noexcept { return params_; }
  const std::vector<std::vector<BlockParams>>& blocks() const noexcept { return blocks_; }

 private:
  WintConfig config_;
  numerics::ParamSet params_;
  numerics::Linear embed_;
  Tensor pos_embed_;
  std::vector<numerics::Linear> merges_;  // merges_[s - 1] feeds stage s
  std::vector<Tensor> probe_seeds_;       // per stage; undefined when unprobed
  std::vector<std::vector<BlockParams>> blocks_;
};

}  // namespace marrprobe::wint
