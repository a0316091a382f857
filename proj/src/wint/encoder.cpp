#include "marrprobe/wint/encoder.hpp"

#include <cmath>

namespace marrprobe::wint {

using namespace numerics;

TokenGrid patch_embed(const Tensor& image, int patch, const Linear& proj, const Tensor& pos_embed) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) != image.dim(1)) {
    throw DimensionError("patch_embed expects a square [H,H,3] image, got " + shape_str(image.shape()));
  }
  const int h = image.dim(0);
  if (patch <= 0 || h % patch != 0) {
    throw ConfigError("image side " + std::to_string(h) + " is not divisible by patch " + std::to_string(patch));
  }
  const int g = h / patch;
  Tensor patches = reshape(permute(reshape(image, {g, patch, g, patch, 3}), {0, 2, 1, 3, 4}), {g * g, -1});
  Tensor tokens = add(proj(patches), pos_embed);
  return {reshape(tokens, {g, g, -1}), 0};
}

namespace {

std::vector<int> window_order(int grid_side, int window_side) {
  const int per = grid_side / window_side;
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(grid_side) * grid_side);
  for (int wy = 0; wy < per; ++wy)
    for (int wx = 0; wx < per; ++wx)
      for (int ty = 0; ty < window_side; ++ty)
        for (int tx = 0; tx < window_side; ++tx) idx.push_back((wy * window_side + ty) * grid_side + wx * window_side + tx);
  return idx;
}

}  // namespace

WindowSet window_partition(const TokenGrid& grid, int window_side) {
  const int side = grid.side();
  if (window_side < 1 || side % window_side != 0) {
    throw ConfigError("window side " + std::to_string(window_side) + " does not divide grid side " +
                      std::to_string(side));
  }
  const int d = grid.tokens.dim(2);
  const int per = side / window_side;
  Tensor flat = reshape(grid.tokens, {side * side, d});
  Tensor w = reshape(index_select(flat, window_order(side, window_side)), {per * per, window_side * window_side, d});
  return {w, window_side, side, false};
}

TokenGrid window_unpartition(const WindowSet& set, std::size_t stage) {
  if (set.has_probe) throw ContractError("window_unpartition with probe slots still present");
  const int side = set.grid_side, d = set.windows.dim(2);
  const std::vector<int> fwd = window_order(side, set.window_side);
  std::vector<int> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<int>(i);
  Tensor flat = reshape(set.windows, {side * side, d});
  return {reshape(index_select(flat, inv), {side, side, d}), stage};
}

WindowSet insert_probes(const WindowSet& set, const Tensor& seed) {
  if (set.has_probe) throw ContractError("probe tokens were already inserted into this window set");
  const int n = set.window_count(), d = set.windows.dim(2);
  if (static_cast<int>(seed.numel()) != d) {
    throw DimensionError("probe seed has " + std::to_string(seed.numel()) + " values, tokens have " +
                         std::to_string(d));
  }
  Tensor copies = index_select(reshape(seed, {1, 1, d}), std::vector<int>(static_cast<std::size_t>(n), 0));
  WindowSet out = set;
  out.windows = concat({set.windows, copies}, 1);
  out.has_probe = true;
  return out;
}

Tensor harvest_probes(const WindowSet& set, WindowSet* visual) {
  if (!set.has_probe) throw ContractError("harvest_probes on a window set without probe tokens");
  const int m = set.visual_tokens(), n = set.window_count(), d = set.windows.dim(2);
  if (visual) {
    *visual = set;
    visual->windows = slice(set.windows, 1, 0, m);
    visual->has_probe = false;
  }
  return reshape(slice(set.windows, 1, m, 1), {n, d});
}

TokenGrid patch_merge(const TokenGrid& grid, const Linear& reduction) {
  const int side = grid.side(), d = grid.tokens.dim(2);
  if (side % 2 != 0) throw ConfigError("patch_merge needs an even grid side, got " + std::to_string(side));
  const int h = side / 2;
  // [h, r, h, c, D] -> [h, h, c, r, D]: channel block index c*2 + r.
  Tensor groups = permute(reshape(grid.tokens, {h, 2, h, 2, d}), {0, 2, 3, 1, 4});
  Tensor merged = reduction(reshape(groups, {h * h, 4 * d}));
  return {reshape(merged, {h, h, -1}), grid.stage + 1};
}

BlockParams BlockParams::create(ParamSet& params, const std::string& name, int dim, int heads, int mlp_ratio,
                                Rng& rng) {
  BlockParams b;
  b.heads = heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  b.norm1 = LayerNorm::create(params, name + ".norm1", dim);
  b.q = Linear::create(params, name + ".q", dim, dim, rng, s);
  b.k = Linear::create(params, name + ".k", dim, dim, rng, s);
  b.v = Linear::create(params, name + ".v", dim, dim, rng, s);
  b.out = Linear::create(params, name + ".out", dim, dim, rng, 0.5 * s);
  b.norm2 = LayerNorm::create(params, name + ".norm2", dim);
  b.fc1 = Linear::create(params, name + ".fc1", dim, mlp_ratio * dim, rng, s);
  b.fc2 = Linear::create(params, name + ".fc2", mlp_ratio * dim, dim, rng,
                         0.5 / std::sqrt(static_cast<double>(mlp_ratio * dim)));
  return b;
}

std::size_t BlockParams::parameter_count(int dim, int mlp_ratio) {
  const std::size_t d = static_cast<std::size_t>(dim), h = d * static_cast<std::size_t>(mlp_ratio);
  return 2 * (2 * d) + 4 * (d * d + d) + (d * h + h) + (h * d + d);
}

Tensor wint_block(const Tensor& windows, const BlockParams& p, Tensor* attn_trace) {
  const int n = windows.dim(0), t = windows.dim(1), d = windows.dim(2);
  const int heads = p.heads, dh = d / heads;
  auto split_heads = [&](const Tensor& x) {
    return reshape(permute(reshape(x, {n, t, heads, dh}), {0, 2, 1, 3}), {n * heads, t, dh});
  };
  Tensor h = p.norm1(windows);
  Tensor q = split_heads(p.q(h));
  Tensor k = split_heads(p.k(h));
  Tensor v = split_heads(p.v(h));
  Tensor att = softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(dh))), 2);
  if (attn_trace) *attn_trace = att;
  Tensor mixed = reshape(permute(reshape(matmul(att, v), {n, heads, t, dh}), {0, 2, 1, 3}), {n, t, d});
  Tensor x = add(windows, p.out(mixed));
  return add(x, p.fc2(gelu(p.fc1(p.norm2(x)))));
}

Encoder::Encoder(const WintConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int patch_dim = config_.patch * config_.patch * 3;
  const int g = config_.grid_side(0);
  const int d0 = config_.stages[0].token_dim;
  embed_ = Linear::create(params_, "embed", patch_dim, d0, rng, 1.0 / std::sqrt(static_cast<double>(patch_dim)));
  pos_embed_ = params_.add("pos_embed", randn({g * g, d0}, rng, 0.02));
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const StageConfig& st = config_.stages[s];
    const std::string prefix = "stage" + std::to_string(s + 1);
    if (s > 0) {
      const int din = 4 * config_.stages[s - 1].token_dim;
      merges_.push_back(Linear::create(params_, prefix + ".merge", din, st.token_dim, rng,
                                       1.0 / std::sqrt(static_cast<double>(din)), false));
    }
    probe_seeds_.push_back(st.probed ? params_.add(prefix + ".probe_seed", Tensor::zeros({st.token_dim})) : Tensor());
    std::vector<BlockParams> stage_blocks;
    for (int b = 0; b < st.blocks; ++b) {
      stage_blocks.push_back(BlockParams::create(params_, prefix + ".block" + std::to_string(b + 1), st.token_dim,
                                                 config_.heads(s), config_.mlp_ratio, rng));
    }
    blocks_.push_back(std::move(stage_blocks));
  }
}

EncodeResult Encoder::encode(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != config_.image_size || image.dim(1) != config_.image_size) {
    throw DimensionError("encoder expects a " + std::to_string(config_.image_size) + "x" +
                         std::to_string(config_.image_size) + "x3 image, got " + shape_str(image.shape()));
  }
  EncodeResult r;
  TokenGrid grid = patch_embed(image, config_.patch, embed_, pos_embed_);
  for (std::size_t s = 0; s < config_.stages.size(); ++s) {
    const StageConfig& st = config_.stages[s];
    if (s > 0) grid = patch_merge(grid, merges_[s - 1]);
    WindowSet ws = window_partition(grid, st.window_side);
    if (st.probed) ws = insert_probes(ws, probe_seeds_[s]);
    for (const BlockParams& b : blocks_[s]) ws.windows = wint_block(ws.windows, b);
    if (st.probed) {
      WindowSet visual;
      r.probes.push_back(harvest_probes(ws, &visual));
      r.probed_stages.push_back(s);
      ws = visual;
    }
    grid = window_unpartition(ws, s);
  }
  r.final_grid = grid;
  return r;
}

}  // namespace marrprobe::wint
