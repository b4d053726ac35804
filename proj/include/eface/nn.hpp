#pragma once

#include <optional>
#include <random>
#include <string>

#include "eface/ops.hpp"

namespace eface {

using Rng = std::mt19937_64;

enum class Init {
  he_normal,  // N(0, 2 / fan_in)
  small,      // N(0, 0.01^2)
  zeros,
};

class Conv2d {
 public:
  Conv2d() = default;
  // Stride-1 convolutions are padded to keep the spatial extent; stride-2
  // 3x3 convolutions halve even extents.
  Conv2d(ParamStore& store, Rng& rng, const std::string& name, int in_ch, int out_ch, int kh, int kw, int stride = 1,
         bool with_bias = true, Init init = Init::he_normal);

  Var operator()(const Var& x) const;

  const std::string& name() const { return name_; }
  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

 private:
  std::string name_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int in_ch_ = 0;
  int out_ch_ = 0;
  ConvGeometry geom_;
};

// Largest group count <= 8 dividing the channel count.
int default_groups(int channels);

class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(ParamStore& store, const std::string& name, int channels);

  Var operator()(const Var& x) const;

 private:
  std::string name_;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  int groups_ = 1;
};

// conv -> optional GroupNorm -> optional SiLU.
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(ParamStore& store, Rng& rng, const std::string& name, int in_ch, int out_ch, int k, int stride,
              bool norm, bool act);

  Var operator()(const Var& x) const;

  const Conv2d& conv() const { return conv_; }

 private:
  Conv2d conv_;
  std::optional<GroupNorm> norm_;
  bool act_ = true;
};

}  // namespace eface
