#include "eface/feature_enhance.hpp"

#include <algorithm>

#include "eface/errors.hpp"

namespace eface {

namespace {
struct Kernel {
  int h;
  int w;
  const char* tag;
};
constexpr std::array<Kernel, 4> kBranchKernels{{{1, 5, "1x5"}, {1, 3, "1x3"}, {3, 1, "3x1"}, {5, 1, "5x1"}}};
}  // namespace

RFEBlock::RFEBlock(ParamStore& store, Rng& rng, const std::string& name, int channels, int reduction)
    : channels_(channels) {
  if (reduction <= 0 || channels <= 0 || channels % (4 * reduction) != 0) {
    throw ConfigError("RFE '" + name + "': " + std::to_string(channels) + " channels not divisible by 4*" +
                      std::to_string(reduction));
  }
  const int mid = channels / (4 * reduction);
  const int quarter = channels / 4;
  for (std::size_t b = 0; b < kBranchKernels.size(); ++b) {
    const Kernel k = kBranchKernels[b];
    const std::string prefix = name + ".branch" + k.tag;
    branches_[b] = Branch{Conv2d(store, rng, prefix + ".reduce", channels, mid, 1, 1),
                          Conv2d(store, rng, prefix + ".shaped", mid, mid, k.h, k.w),
                          Conv2d(store, rng, prefix + ".restore", mid, quarter, 1, 1)};
  }
  // Zero projection makes the block an exact identity at initialization.
  project_ = Conv2d(store, rng, name + ".project", channels, channels, 1, 1, 1, true, Init::zeros);
}

Var RFEBlock::operator()(const Var& x) const {
  if (x->shape().c != channels_) {
    throw ShapeError("RFE block built for " + std::to_string(channels_) + " channels got " + x->shape().str());
  }
  std::array<Var, 4> parts;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const Branch& br = branches_[b];
    parts[b] = br.restore(silu(br.shaped(silu(br.reduce(x)))));
  }
  return add(x, project_(concat_channels(parts)));
}

Var rfe_apply(const Var& x, const RFEBlock& block) { return block(x); }

SpatialAttention::SpatialAttention(ParamStore& store, Rng& rng, const std::string& name)
    : conv_(store, rng, name + ".conv", 2, 1, 3, 3, 1, true, Init::small) {}

Var SpatialAttention::gate_logits(const Var& x) const { return conv_(channel_stats(x)); }

Var SpatialAttention::operator()(const Var& x) const { return mul_broadcast(x, sigmoid(gate_logits(x))); }

ChannelAttention::ChannelAttention(ParamStore& store, Rng& rng, const std::string& name, int channels, int reduction)
    : squeeze_(store, rng, name + ".squeeze", 2 * channels, std::max(1, channels / reduction), 1, 1),
      excite_(store, rng, name + ".excite", std::max(1, channels / reduction), channels, 1, 1, 1, true, Init::small) {}

Var ChannelAttention::gate_logits(const Var& x) const { return excite_(silu(squeeze_(global_stats(x)))); }

Var ChannelAttention::operator()(const Var& x) const { return mul_broadcast(x, sigmoid(gate_logits(x))); }

AttentionStack::AttentionStack(ParamStore& store, Rng& rng, const std::string& name, int channels, int depth) {
  if (depth < 0) throw ConfigError("attention depth must be non-negative, got " + std::to_string(depth));
  units_.reserve(static_cast<std::size_t>(depth));
  for (int d = 0; d < depth; ++d) {
    const std::string prefix = name + ".unit" + std::to_string(d);
    units_.push_back(Unit{SpatialAttention(store, rng, prefix + ".spatial"),
                          ChannelAttention(store, rng, prefix + ".channel", channels)});
  }
}

Var AttentionStack::operator()(const Var& x) const {
  Var y = x;
  for (const auto& u : units_) y = u.channel(u.spatial(y));
  return y;
}

Var spatial_attention(const Var& x, const SpatialAttention& gate) { return gate(x); }
Var channel_attention(const Var& x, const ChannelAttention& gate) { return gate(x); }
Var attention_stack(const Var& x, const AttentionStack& stack) { return stack(x); }

}  // namespace eface
