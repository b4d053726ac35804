#include "eface/pyramid_features.hpp"

#include <cmath>

#include "eface/errors.hpp"

namespace eface {

void check_input_size(int height, int width) {
  if (height <= 0 || width <= 0 || height % kSizeMultiple != 0 || width % kSizeMultiple != 0) {
    throw SizingError("input " + std::to_string(height) + "x" + std::to_string(width) +
                      " must have height and width that are positive multiples of " + std::to_string(kSizeMultiple));
  }
}

void check_pyramid(const Pyramid& p, int first, int last) {
  if (p.size() != static_cast<std::size_t>(last - first + 1) || p.begin()->first != first ||
      p.rbegin()->first != last) {
    throw ShapeError("pyramid must hold exactly levels " + std::to_string(first) + ".." + std::to_string(last));
  }
  const Shape* prev = nullptr;
  for (const auto& [level, fm] : p) {
    if (!fm.data) throw ShapeError("level " + std::to_string(level) + " has no data");
    if (fm.level != level || fm.stride != level_stride(level)) {
      throw ShapeError("level " + std::to_string(level) + " carries inconsistent level/stride tags");
    }
    const Shape& s = fm.shape();
    if (s.c <= 0) throw ShapeError("level " + std::to_string(level) + " has no channels");
    if (prev != nullptr && (prev->h != 2 * s.h || prev->w != 2 * s.w)) {
      throw ShapeError("level " + std::to_string(level) + " extent " + s.str() + " is not half of the level below");
    }
    if (!fm.data->value.all_finite()) throw NonFiniteError("level " + std::to_string(level) + " has non-finite values");
    prev = &s;
  }
}

void BackboneConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_widths[i] <= 0) throw ConfigError("backbone stage width must be positive");
    if (stage_depths[i] <= 0) throw ConfigError("backbone stage depth must be positive");
  }
}

BackboneConfig BackboneConfig::from_tag(std::string_view tag) {
  if (tag == "tiny") return BackboneConfig{};
  struct Coef {
    std::string_view tag;
    double width;
    double depth;
  };
  static constexpr std::array<Coef, 6> kFamily{{{"b0", 1.0, 1.0},
                                                {"b1", 1.0, 1.1},
                                                {"b2", 1.1, 1.2},
                                                {"b3", 1.2, 1.4},
                                                {"b4", 1.4, 1.8},
                                                {"b5", 1.6, 2.2}}};
  static constexpr std::array<int, 4> kBaseWidths{24, 40, 112, 320};
  static constexpr std::array<int, 4> kBaseDepths{2, 2, 3, 4};
  for (const auto& c : kFamily) {
    if (c.tag != tag) continue;
    BackboneConfig cfg;
    cfg.scaling_tag = std::string(tag);
    for (int i = 0; i < 4; ++i) {
      const double w = kBaseWidths[i] * c.width;
      int rounded = std::max(8, static_cast<int>(w + 4.0) / 8 * 8);
      if (rounded < 0.9 * w) rounded += 8;
      cfg.stage_widths[i] = rounded;
      cfg.stage_depths[i] = static_cast<int>(std::ceil(kBaseDepths[i] * c.depth - 1e-9));
    }
    return cfg;
  }
  throw ConfigError("unknown backbone tag '" + std::string(tag) + "' (expected tiny or b0..b5)");
}

StageBackbone::StageBackbone(ParamStore& store, Rng& rng, const BackboneConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  stem_ = ConvNormAct(store, rng, "backbone.stem", 3, cfg.stage_widths[0], 3, 2, true, true);
  int in = cfg.stage_widths[0];
  for (int s = 0; s < 4; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s + kMinLevel);
    const int width = cfg.stage_widths[s];
    stages_[s].emplace_back(store, rng, prefix + ".down", in, width, 3, 2, true, true);
    for (int d = 1; d < cfg.stage_depths[s]; ++d) {
      stages_[s].emplace_back(store, rng, prefix + ".block" + std::to_string(d), width, width, 3, 1, true, true);
    }
    in = width;
  }
}

Pyramid StageBackbone::forward(const Var& image) const {
  Pyramid out;
  Var x = stem_(image);
  for (int s = 0; s < 4; ++s) {
    x = stages_[s].front()(x);
    for (std::size_t d = 1; d < stages_[s].size(); ++d) x = add(x, stages_[s][d](x));
    const int level = s + kMinLevel;
    out[level] = FeatureMap{x, level, level_stride(level)};
  }
  return out;
}

Pyramid extract_levels(const Var& image, const BackboneAdapter& backbone) {
  const Shape& s = image->shape();
  if (s.c != 3) throw ShapeError("image must have 3 channels, got " + s.str());
  check_input_size(s.h, s.w);
  Pyramid c = backbone.forward(image);
  check_pyramid(c, 2, 5);
  const auto widths = backbone.widths();
  for (const auto& [level, fm] : c) {
    const Shape& fs = fm.shape();
    if (fs.h != s.h / fm.stride || fs.w != s.w / fm.stride || fs.c != widths[level - kMinLevel]) {
      throw ShapeError("backbone level " + std::to_string(level) + " has shape " + fs.str());
    }
  }
  return c;
}

LevelExtension::LevelExtension(ParamStore& store, Rng& rng, int c5_channels, int pyramid_width)
    : to_c6_(store, rng, "extend.c6", c5_channels, pyramid_width, 3, 2, true, false),
      to_c7_(store, rng, "extend.c7", pyramid_width, pyramid_width, 3, 2, true, false) {}

Pyramid LevelExtension::extend_levels(const Pyramid& c) const {
  check_pyramid(c, 2, 5);
  Pyramid out = c;
  Var c6 = to_c6_(c.at(5).data);
  Var c7 = to_c7_(c6);
  out[6] = FeatureMap{c6, 6, level_stride(6)};
  out[7] = FeatureMap{c7, 7, level_stride(7)};
  return out;
}

InputProjection::InputProjection(ParamStore& store, Rng& rng, const std::array<int, 4>& widths, int pyramid_width)
    : width_(pyramid_width) {
  for (int i = 0; i < 4; ++i) {
    lateral_[i] = ConvNormAct(store, rng, "lateral.p" + std::to_string(i + kMinLevel), widths[i], pyramid_width, 1, 1,
                              true, false);
  }
}

Pyramid InputProjection::normalize_inputs(const Pyramid& c) const {
  check_pyramid(c, 2, 7);
  Pyramid p;
  for (int level = 2; level <= 5; ++level) {
    p[level] = FeatureMap{lateral_[level - kMinLevel](c.at(level).data), level, level_stride(level)};
  }
  for (int level = 6; level <= 7; ++level) {
    if (c.at(level).shape().c != width_) {
      throw ShapeError("C" + std::to_string(level) + " must already be at pyramid width " + std::to_string(width_));
    }
    p[level] = c.at(level);
  }
  return p;
}

}  // namespace eface
