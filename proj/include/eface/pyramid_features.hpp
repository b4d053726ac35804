#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <string_view>

#include "eface/nn.hpp"

namespace eface {

inline constexpr int kMinLevel = 2;
inline constexpr int kMaxLevel = 7;
// Input height and width must be multiples of the level-7 stride.
inline constexpr int kSizeMultiple = 128;

constexpr int level_stride(int level) { return 4 << (level - kMinLevel); }

struct FeatureMap {
  Var data;  // [N, C, H, W]
  int level = 0;
  int stride = 0;

  const Shape& shape() const { return data->shape(); }
};

using Pyramid = std::map<int, FeatureMap>;

// Throws SizingError unless both extents are positive multiples of 128.
void check_input_size(int height, int width);

// Verifies that the pyramid holds exactly levels [first, last], that each
// level's stride matches, that spatial extents halve level to level and that
// every value is finite.
void check_pyramid(const Pyramid& p, int first, int last);

struct BackboneConfig {
  std::array<int, 4> stage_widths{16, 24, 40, 64};
  std::array<int, 4> stage_depths{1, 1, 1, 1};
  std::string scaling_tag = "tiny";

  void validate() const;

  // "tiny" or "b0".."b5". The b-family follows compound width/depth scaling
  // of a fixed base; widths are rounded to multiples of 8.
  static BackboneConfig from_tag(std::string_view tag);
};

// Anything that maps an image batch [N,3,H,W] to C2..C5. A pretrained
// network can be plugged in behind this interface.
class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;
  virtual Pyramid forward(const Var& image) const = 0;
  virtual std::array<int, 4> widths() const = 0;
};

// Strided convolution stages: a stride-2 stem, then per stage one stride-2
// block followed by (depth - 1) residual 3x3 blocks.
class StageBackbone final : public BackboneAdapter {
 public:
  StageBackbone(ParamStore& store, Rng& rng, const BackboneConfig& cfg);

  Pyramid forward(const Var& image) const override;
  std::array<int, 4> widths() const override { return cfg_.stage_widths; }

 private:
  BackboneConfig cfg_;
  ConvNormAct stem_;
  std::array<std::vector<ConvNormAct>, 4> stages_;
};

// Runs the backbone after validating the input size, and checks the
// C2..C5 contract on the way out.
Pyramid extract_levels(const Var& image, const BackboneAdapter& backbone);

// C6 and C7 as 3x3 stride-2 reductions straight to pyramid width.
class LevelExtension {
 public:
  LevelExtension(ParamStore& store, Rng& rng, int c5_channels, int pyramid_width);

  // Takes C2..C5, returns C2..C7. Levels 2..5 are passed through untouched.
  Pyramid extend_levels(const Pyramid& c) const;

 private:
  ConvNormAct to_c6_;
  ConvNormAct to_c7_;
};

// P_i = norm(conv1x1(C_i)) for i in 2..5, P6 = C6, P7 = C7.
class InputProjection {
 public:
  InputProjection(ParamStore& store, Rng& rng, const std::array<int, 4>& widths, int pyramid_width);

  Pyramid normalize_inputs(const Pyramid& c) const;

 private:
  int width_;
  std::array<ConvNormAct, 4> lateral_;
};

}  // namespace eface
