#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "marrprobe/numerics/tensor.hpp"

namespace marrprobe::numerics {

// One recorded operation. The backward closure reads output.grad_span() and
// accumulates into the gradients of those inputs that require them.
struct TapeNode {
  const char* op = "";
  std::vector<Tensor> inputs;
  Tensor output;
  std::function<void()> backward;
};

// Append-only operation log. Nodes are pushed in execution order, so every
// node's inputs were produced by earlier nodes (or are leaves).
class Tape {
 public:
  void push(TapeNode node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<TapeNode>& nodes() const noexcept { return nodes_; }
  void clear() noexcept { nodes_.clear(); }

 private:
  std::vector<TapeNode> nodes_;
};

// The tape that ops record onto for the current thread, or nullptr.
Tape* active_tape() noexcept;

class TapeScope {
 public:
  explicit TapeScope(Tape& tape) noexcept;
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True when a tape is active and any input requires a gradient.
bool should_record(std::initializer_list<const Tensor*> inputs) noexcept;
bool should_record(const std::vector<Tensor>& inputs) noexcept;

// Marks `out` as differentiable and pushes a node onto the active tape.
void record(const char* op, std::vector<Tensor> inputs, Tensor& out, std::function<void()> backward);

// Reverse sweep. root must be a scalar produced on `tape`; d(root)/d(t) is
// accumulated into every tensor t that requires a gradient. Leaf gradients
// accumulate across calls until zero_grad().
void backward(const Tensor& root, const Tape& tape);

// Adds g into t's gradient buffer when t requires one.
template <class T>
void accumulate_grad(const Tensor& t, std::span<const T> g) {
  if (!t.requires_grad()) return;
  auto dst = t.grad_span<T>();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

// Branch fingerprints of non-smooth ops (relu masks, abs signs, argmax
// winners, rasterizer triangle ids). The gradient checker compares digests of
// perturbed evaluations to flag coordinates whose perturbation crosses a kink.
namespace decisions {
bool enabled() noexcept;
void note(std::uint64_t value) noexcept;
void note_bits(const std::vector<std::uint8_t>& bits) noexcept;
std::uint64_t digest() noexcept;

class Recorder {
 public:
  Recorder() noexcept;
  ~Recorder();
  Recorder(const Recorder&) = delete;
  Recorder& operator=(const Recorder&) = delete;
  std::uint64_t digest() const noexcept;

 private:
  bool previous_enabled_;
  std::uint64_t previous_digest_;
};
}  // namespace decisions

}  // namespace marrprobe::numerics
