#include "marrprobe/numerics/tape.hpp"

namespace marrprobe::numerics {

namespace {
thread_local Tape* t_tape = nullptr;
thread_local bool t_decisions_enabled = false;
thread_local std::uint64_t t_decision_digest = 0;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;
}  // namespace

Tape* active_tape() noexcept { return t_tape; }

TapeScope::TapeScope(Tape& tape) noexcept : previous_(t_tape) { t_tape = &tape; }

TapeScope::~TapeScope() { t_tape = previous_; }

bool should_record(std::initializer_list<const Tensor*> inputs) noexcept {
  if (!t_tape) return false;
  for (const Tensor* t : inputs) {
    if (t && t->requires_grad()) return true;
  }
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) noexcept {
  if (!t_tape) return false;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

void record(const char* op, std::vector<Tensor> inputs, Tensor& out, std::function<void()> backward) {
  if (!t_tape) throw ContractError(std::string("record(") + op + ") without an active tape");
  out.set_requires_grad(true);
  t_tape->push(TapeNode{op, std::move(inputs), out, std::move(backward)});
}

void backward(const Tensor& root, const Tape& tape) {
  if (!root.defined() || root.numel() != 1 || root.rank() != 0) {
    throw ContractError("backward() requires a scalar root, got " +
                        (root.defined() ? shape_str(root.shape()) : std::string("undefined")));
  }
  if (!root.requires_grad()) return;
  bool found = false;
  for (const TapeNode& n : tape.nodes()) {
    if (n.output.id() == root.id()) {
      found = true;
      break;
    }
  }
  if (!found) throw ContractError("backward() root was not produced on this tape");

  dispatch(root.dtype(), [&](auto tag) {
    using T = typename decltype(tag)::type;
    root.grad_span<T>()[0] += T{1};
  });
  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

namespace decisions {

bool enabled() noexcept { return t_decisions_enabled; }

void note(std::uint64_t value) noexcept {
  if (!t_decisions_enabled) return;
  for (int i = 0; i < 8; ++i) {
    t_decision_digest ^= (value >> (8 * i)) & 0xffU;
    t_decision_digest *= kFnvPrime;
  }
}

void note_bits(const std::vector<std::uint8_t>& bits) noexcept {
  if (!t_decisions_enabled) return;
  for (std::uint8_t b : bits) {
    t_decision_digest ^= b;
    t_decision_digest *= kFnvPrime;
  }
}

std::uint64_t digest() noexcept { return t_decision_digest; }

Recorder::Recorder() noexcept
    : previous_enabled_(t_decisions_enabled), previous_digest_(t_decision_digest) {
  t_decisions_enabled = true;
  t_decision_digest = kFnvOffset;
}

Recorder::~Recorder() {
  t_decisions_enabled = previous_enabled_;
  t_decision_digest = previous_digest_;
}

std::uint64_t Recorder::digest() const noexcept { return t_decision_digest; }

}  // namespace decisions

}  // namespace marrprobe::numerics
