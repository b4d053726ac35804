#include <doctest.h>

#include <random>

#include "eface/errors.hpp"
#include "eface/evaluation.hpp"
#include "support/gradcheck.hpp"
#include "support/small_model.hpp"

using namespace eface;
using namespace eface::testing;

TEST_CASE("forward yields one logit and four deltas per cell") {
  const auto model = build(small_config());
  std::mt19937_64 rng(1);
  const Tensor image = random_tensor(Shape{1, 3, 256, 256}, rng, 0.0, 1.0);
  const auto out = model->forward(image);
  REQUIRE(out.size() == 6);
  const std::array<int, 6> cells{4096, 1024, 256, 64, 16, 4};
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(out[i].level == static_cast<int>(i) + 2);
    CHECK(out[i].cls->shape().c == 1);
    CHECK(out[i].reg->shape().c == 4);
    CHECK(static_cast<int>(out[i].cls->shape().plane()) == cells[i]);
    CHECK(out[i].cls->value.all_finite());
    CHECK(out[i].reg->value.all_finite());
  }
}

TEST_CASE("doubling the image quadruples the cells per level") {
  const auto model = build(small_config());
  const auto a = model->forward(Tensor(Shape{1, 3, 128, 128}, 0.3));
  const auto b = model->forward(Tensor(Shape{1, 3, 256, 256}, 0.3));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i].cls->shape().plane() == 4 * a[i].cls->shape().plane());
}

TEST_CASE("inputs that are not multiples of 128 are rejected") {
  const auto model = build(small_config());
  CHECK_THROWS_AS(model->forward(Tensor(Shape{1, 3, 192, 128})), SizingError);
}

TEST_CASE("builds are deterministic in the seed") {
  const auto a = build(small_config(5));
  const auto b = build(small_config(5));
  const auto c = build(small_config(6));
  bool any_diff = false;
  for (std::size_t i = 0; i < a->params().all().size(); ++i) {
    CHECK(max_abs_diff(a->params().all()[i]->value, b->params().all()[i]->value) == 0.0);
    any_diff = any_diff || max_abs_diff(a->params().all()[i]->value, c->params().all()[i]->value) > 0.0;
  }
  CHECK(any_diff);
}

TEST_CASE("untrained detector output is capped, sorted and repeatable") {
  DetectorConfig cfg = small_config();
  cfg.infer.score_thr = 0.0;
  cfg.infer.max_det = 25;
  const auto model = build(cfg);
  std::mt19937_64 rng(2);
  const Tensor image = random_tensor(Shape{1, 3, 128, 128}, rng, 0.0, 1.0);
  const BoxList d = model->detect(image);
  CHECK(d.size() <= 25);
  CHECK(d.size() > 0);
  for (std::size_t i = 1; i < d.size(); ++i) CHECK(d.scores[i - 1] >= d.scores[i]);
  for (const Box& b : d.boxes) {
    CHECK(b.x1 >= 0.0);
    CHECK(b.y2 <= 128.0);
  }
  const BoxList again = model->detect(image);
  CHECK(again.boxes == d.boxes);
  CHECK(again.scores == d.scores);
  // The low prior keeps almost everything under the default threshold.
  CHECK(model->detect(image, InferConfig{}).size() <= d.size());
}

TEST_CASE("classification bias starts at the prior") {
  const auto model = build(small_config());
  const double bias = model->head().cls_output().bias()->value[0];
  CHECK(1.0 / (1.0 + std::exp(-bias)) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("invalid configuration is reported in one error") {
  DetectorConfig cfg = small_config();
  cfg.pyramid_width = 18;
  cfg.head_depth = 0;
  cfg.infer.nms_iou = 0.0;
  cfg.neck_depth = 2;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("rfe.reduction") != std::string::npos);
    CHECK(msg.find("head.depth") != std::string::npos);
    CHECK(msg.find("nms_iou") != std::string::npos);
    CHECK(msg.find("neck.depth") != std::string::npos);
  }
  CHECK_THROWS_AS(build(cfg), ConfigError);
}

TEST_CASE("feature enhancement is per level and optional") {
  DetectorConfig with = small_config();
  DetectorConfig without = small_config();
  without.use_rfe = false;
  without.use_attention = false;
  const auto a = build(with);
  const auto b = build(without);
  CHECK(a->params().find("rfe.p2.project.weight") != nullptr);
  CHECK(a->params().find("rfe.p7.project.weight") != nullptr);
  CHECK(a->params().find("attn.p5.unit0.channel.excite.weight") != nullptr);
  CHECK(b->params().find("rfe.p2.project.weight") == nullptr);
  CHECK(a->params().scalar_count() > b->params().scalar_count());
}

TEST_CASE("parameter count equals the profiler's count") {
  const auto model = build(small_config());
  const auto report = profile(*model, 128);
  CHECK(report.total_params == static_cast<std::int64_t>(model->params().scalar_count()));
  CHECK(report.uncounted().empty());
}

TEST_CASE("decode_level turns head maps into boxes") {
  const AnchorSet set = generate_anchors(128, 128, AnchorConfig{});
  const AnchorLevel& lvl = set.levels[3];  // stride 32, 4x4 cells, 128-px anchors
  LevelOutput out;
  out.level = lvl.level;
  out.stride = lvl.stride;
  Tensor cls(Shape{1, 1, 4, 4}, -10.0);
  cls.at(0, 0, 1, 2) = 3.0;
  Tensor reg(Shape{1, 4, 4, 4}, 0.0);
  out.cls = constant(cls);
  out.reg = constant(reg);
  const BoxList d = decode_level(out, 0, lvl, set, 0.5, 100);
  REQUIRE(d.size() == 1);
  CHECK(d.scores[0] == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
  const Box expected = set.anchors.boxes[lvl.offset + 1 * 4 + 2];
  CHECK(d.boxes[0] == expected);
}
