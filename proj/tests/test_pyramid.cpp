#include <doctest.h>

#include "eface/errors.hpp"
#include "eface/pyramid_features.hpp"

using namespace eface;

TEST_CASE("input sizes must be multiples of 128") {
  CHECK_NOTHROW(check_input_size(256, 384));
  CHECK_THROWS_AS(check_input_size(200, 256), SizingError);
  CHECK_THROWS_AS(check_input_size(0, 128), SizingError);
  try {
    check_input_size(100, 128);
  } catch (const SizingError& e) {
    CHECK(std::string(e.what()).find("128") != std::string::npos);
  }
}

TEST_CASE("strides double per level") {
  CHECK(level_stride(2) == 4);
  CHECK(level_stride(5) == 32);
  CHECK(level_stride(7) == 128);
}

TEST_CASE("backbone produces C2..C5 at strides 4..32") {
  ParamStore store;
  Rng rng(1);
  const BackboneConfig cfg = BackboneConfig::from_tag("tiny");
  const StageBackbone backbone(store, rng, cfg);
  const Var image = constant(Tensor(Shape{1, 3, 256, 128}, 0.5));
  const Pyramid c = extract_levels(image, backbone);
  REQUIRE(c.size() == 4);
  for (int level = 2; level <= 5; ++level) {
    const auto& f = c.at(level);
    CHECK(f.stride == level_stride(level));
    CHECK(f.shape().h == 256 / f.stride);
    CHECK(f.shape().w == 128 / f.stride);
    CHECK(f.shape().c == cfg.stage_widths[static_cast<std::size_t>(level - 2)]);
  }
  CHECK_THROWS_AS(extract_levels(constant(Tensor(Shape{1, 3, 96, 128})), backbone), SizingError);
}

TEST_CASE("extension and projection complete the pyramid") {
  ParamStore store;
  Rng rng(2);
  const BackboneConfig cfg = BackboneConfig::from_tag("tiny");
  const StageBackbone backbone(store, rng, cfg);
  const LevelExtension ext(store, rng, cfg.stage_widths[3], 16);
  const InputProjection proj(store, rng, cfg.stage_widths, 16);
  const Pyramid c = ext.extend_levels(extract_levels(constant(Tensor(Shape{2, 3, 128, 128}, 0.25)), backbone));
  CHECK(c.at(6).shape() == Shape{2, 16, 2, 2});
  CHECK(c.at(7).shape() == Shape{2, 16, 1, 1});
  const Pyramid p = proj.normalize_inputs(c);
  CHECK_NOTHROW(check_pyramid(p, 2, 7));
  for (int level = 2; level <= 7; ++level) CHECK(p.at(level).shape().c == 16);
  CHECK(p.at(6).data == c.at(6).data);
}

TEST_CASE("check_pyramid reports level problems") {
  Pyramid p;
  p[2] = FeatureMap{constant(Tensor(Shape{1, 1, 8, 8})), 2, 4};
  p[3] = FeatureMap{constant(Tensor(Shape{1, 1, 4, 4})), 3, 8};
  CHECK_NOTHROW(check_pyramid(p, 2, 3));
  CHECK_THROWS_AS(check_pyramid(p, 2, 4), ShapeError);
  p[3].stride = 16;
  CHECK_THROWS_AS(check_pyramid(p, 2, 3), ShapeError);
  p[3] = FeatureMap{constant(Tensor(Shape{1, 1, 3, 3})), 3, 8};
  CHECK_THROWS_AS(check_pyramid(p, 2, 3), ShapeError);
  p[3] = FeatureMap{constant(Tensor(Shape{1, 1, 4, 4}, std::nan(""))), 3, 8};
  CHECK_THROWS_AS(check_pyramid(p, 2, 3), NonFiniteError);
}

TEST_CASE("backbone tags") {
  const auto tiny = BackboneConfig::from_tag("tiny");
  CHECK(tiny.stage_widths == std::array<int, 4>{16, 24, 40, 64});
  const auto b0 = BackboneConfig::from_tag("b0");
  CHECK(b0.stage_widths == std::array<int, 4>{24, 40, 112, 320});
  CHECK(b0.stage_depths == std::array<int, 4>{2, 2, 3, 4});
  int prev_width = 0;
  for (const char* tag : {"b0", "b1", "b2", "b3", "b4", "b5"}) {
    const auto cfg = BackboneConfig::from_tag(tag);
    CHECK(cfg.scaling_tag == tag);
    for (int w : cfg.stage_widths) CHECK(w % 8 == 0);
    CHECK(cfg.stage_widths[3] >= prev_width);
    prev_width = cfg.stage_widths[3];
  }
  CHECK_THROWS_AS(BackboneConfig::from_tag("b9"), ConfigError);
  BackboneConfig bad = tiny;
  bad.stage_depths[1] = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
