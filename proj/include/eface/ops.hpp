#pragma once

#include <span>

#include "eface/autograd.hpp"

namespace eface {

struct ConvGeometry {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
};

// weight: [Cout, Cin, Kh, Kw]; bias: [1, Cout, 1, 1] or null.
Var conv2d(const Var& x, Parameter& weight, Parameter* bias, ConvGeometry geom);

// gamma, beta: [1, C, 1, 1]. Statistics are per sample and per group, so
// training and inference behave identically.
Var group_norm(const Var& x, Parameter& gamma, Parameter& beta, int groups, double eps = 1e-5);

Var sigmoid(const Var& x);
Var silu(const Var& x);
Var add(const Var& a, const Var& b);
// a + lambda * b for same-shaped operands.
Var add_scaled(const Var& a, const Var& b, double lambda);

// x * gate where gate is [N,1,H,W] (per pixel) or [N,C,1,1] (per channel).
Var mul_broadcast(const Var& x, const Var& gate);

// 2x2 window, stride 2. Requires even H and W.
Var max_pool2(const Var& x);
// Nearest-neighbour 2x.
Var upsample2(const Var& x);

Var concat_channels(std::span<const Var> parts);

// [N,2,H,W]: mean and max across channels at every pixel.
Var channel_stats(const Var& x);
// [N,2C,1,1]: spatial mean of each channel followed by spatial max of each channel.
Var global_stats(const Var& x);

// Fast normalized fusion: sum_k relu(w_k) x_k / (eps + sum_j relu(w_j)).
// raw_weights holds K scalars.
Var weighted_sum(std::span<const Var> inputs, Parameter& raw_weights, double eps);

// relu(w_k) / (eps + sum_j relu(w_j)).
std::vector<double> normalized_fusion_weights(std::span<const double> raw, double eps);

}  // namespace eface
