#pragma once

#include <array>
#include <string>
#include <vector>

#include "eface/nn.hpp"

namespace eface {

// Four parallel branches with 1x5, 1x3, 3x1 and 5x1 kernels, concatenated,
// projected back to the input width and added to the input.
class RFEBlock {
 public:
  static constexpr int kDefaultReduction = 4;

  RFEBlock(ParamStore& store, Rng& rng, const std::string& name, int channels, int reduction = kDefaultReduction);

  Var operator()(const Var& x) const;

  int channels() const { return channels_; }
  const Conv2d& projection() const { return project_; }

 private:
  struct Branch {
    Conv2d reduce;
    Conv2d shaped;
    Conv2d restore;
  };
  int channels_;
  std::array<Branch, 4> branches_;
  Conv2d project_;
};

Var rfe_apply(const Var& x, const RFEBlock& block);

// out = x * sigmoid(conv3x3([mean_c(x), max_c(x)])).
class SpatialAttention {
 public:
  SpatialAttention(ParamStore& store, Rng& rng, const std::string& name);

  Var operator()(const Var& x) const;
  Var gate_logits(const Var& x) const;
  const Conv2d& conv() const { return conv_; }

 private:
  Conv2d conv_;
};

// out = x * sigmoid(v), v from a bottleneck over spatial mean and max pools.
class ChannelAttention {
 public:
  ChannelAttention(ParamStore& store, Rng& rng, const std::string& name, int channels, int reduction = 4);

  Var operator()(const Var& x) const;
  Var gate_logits(const Var& x) const;
  const Conv2d& squeeze() const { return squeeze_; }
  const Conv2d& excite() const { return excite_; }

 private:
  Conv2d squeeze_;
  Conv2d excite_;
};

// depth units of (spatial, channel) attention. Depth 0 is the identity.
class AttentionStack {
 public:
  static constexpr int kDefaultDepth = 2;

  AttentionStack(ParamStore& store, Rng& rng, const std::string& name, int channels, int depth);

  Var operator()(const Var& x) const;
  int depth() const { return static_cast<int>(units_.size()); }

  SpatialAttention& spatial(int unit) { return units_.at(unit).spatial; }
  ChannelAttention& channel(int unit) { return units_.at(unit).channel; }

 private:
  struct Unit {
    SpatialAttention spatial;
    ChannelAttention channel;
  };
  std::vector<Unit> units_;
};

Var spatial_attention(const Var& x, const SpatialAttention& gate);
Var channel_attention(const Var& x, const ChannelAttention& gate);
Var attention_stack(const Var& x, const AttentionStack& stack);

}  // namespace eface
