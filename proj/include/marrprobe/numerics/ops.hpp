#pragma once

#include <vector>

#include "marrprobe/numerics/tape.hpp"
#include "marrprobe/numerics/tensor.hpp"

// Differentiable operator set. Every op computes its forward eagerly and, when
// a tape is active and an input requires a gradient, records a backward rule.
//
// Non-smooth points: abs and relu use subgradient 0 at 0; hardmax-style
// selections live in the modules that own them and document their own rules.
namespace marrprobe::numerics {

// Elementwise binary ops with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor neg(const Tensor& x);

Tensor exp(const Tensor& x);
// Natural log; inputs must be strictly positive.
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor square(const Tensor& x);
// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& x);

// [m,k]x[k,n] or batched [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
// Normalizes over the last axis; gain and bias have the last axis' length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// One entry of the new shape may be -1.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
// Gathers slices along axis 0; indices may repeat (backward scatter-adds).
Tensor index_select(const Tensor& x, const std::vector<int>& indices);
// Mirrors along one axis.
Tensor flip(const Tensor& x, int axis);

// [B,C,H,W] -> [B,C,2H,2W].
Tensor upsample_nearest2x(const Tensor& x);
// 3x3 convolution with zero padding 1. x: [B,Cin,H,W], weight: [Cout,Cin,3,3],
// bias: [Cout]. stride 1 or 2.
Tensor conv3x3(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1);

// grid: [H,W,C]; coords: [H',W',2] holding (x=column, y=row) in continuous
// pixel units where integer coordinates address lattice points. Coordinates
// outside the grid clamp to the border.
Tensor bilinear_sample(const Tensor& grid, const Tensor& coords);

// Horizontal mirror of an image-like tensor [H,W] or [H,W,C].
Tensor hflip(const Tensor& x);

}  // namespace marrprobe::numerics
