#include <doctest.h>

#include <array>
#include <cmath>

#include "eface/errors.hpp"
#include "eface/sbifpn.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/toy.hpp"

using namespace eface;
using namespace eface::testing;

namespace {

Var scalar_map(double v) { return constant(Tensor(Shape{1, 1, 1, 1}, v)); }

double blend_of(std::array<double, 2> raw, double a, double b) {
  ParamStore store;
  Rng rng(0);
  FusionNode node(store, rng, "n", 2, 1, false);
  node.raw_weights().value[0] = raw[0];
  node.raw_weights().value[1] = raw[1];
  const std::array<Var, 2> in{scalar_map(a), scalar_map(b)};
  return node.blend(in)->value[0];
}

void jitter_all(ParamStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (const auto& p : store.all()) {
    for (double& v : p->value.values()) v += u(rng);
  }
}

}  // namespace

TEST_CASE("fusion blend examples") {
  CHECK(blend_of({1, 1}, 2, 4) == doctest::Approx(3.0).epsilon(1e-4));
  CHECK(blend_of({1, 3}, 2, 4) == doctest::Approx(14.0 / 4.0001).epsilon(1e-12));
  CHECK(std::abs(blend_of({1, 3}, 2, 4) - 3.49991) < 1e-5);
  CHECK(blend_of({-5, -5}, 2, 4) == 0.0);
}

TEST_CASE("normalized weights are non-negative and sum to one") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 3.0);
  for (int t = 0; t < 50; ++t) {
    const std::array<double, 3> raw{u(rng), u(rng), std::abs(u(rng)) + 0.01};
    const auto w = normalized_fusion_weights(raw, kFusionEpsilon);
    double sum = 0.0, rectified = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(w[k] >= 0.0);
      sum += w[k];
      rectified += std::max(0.0, raw[k]);
    }
    // Epsilon keeps the sum just under one.
    CHECK(std::abs(sum - rectified / (rectified + kFusionEpsilon)) < 1e-15);
    CHECK(1.0 - sum <= kFusionEpsilon / rectified + 1e-15);
  }
}

TEST_CASE("blend is permutation equivariant and convex") {
  std::mt19937_64 rng(4);
  ParamStore store;
  Rng r(0);
  FusionNode a(store, r, "a", 3, 2, false);
  FusionNode b(store, r, "b", 3, 2, false);
  const std::array<double, 3> raw{0.7, 2.0, 0.2};
  const std::array<int, 3> perm{2, 0, 1};
  const std::array<Tensor, 3> x{random_tensor(Shape{1, 2, 4, 4}, rng), random_tensor(Shape{1, 2, 4, 4}, rng),
                                random_tensor(Shape{1, 2, 4, 4}, rng)};
  for (int k = 0; k < 3; ++k) {
    a.raw_weights().value[static_cast<std::size_t>(k)] = raw[static_cast<std::size_t>(k)];
    b.raw_weights().value[static_cast<std::size_t>(k)] = raw[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
  }
  const std::array<Var, 3> in_a{constant(x[0]), constant(x[1]), constant(x[2])};
  const std::array<Var, 3> in_b{constant(x[2]), constant(x[0]), constant(x[1])};
  const Var ya = a.blend(in_a);
  const Var yb = b.blend(in_b);
  CHECK(max_abs_diff(ya->value, yb->value) < 1e-14);
  for (std::size_t i = 0; i < ya->value.size(); ++i) {
    const double lo = std::min({x[0][i], x[1][i], x[2][i]});
    const double hi = std::max({x[0][i], x[1][i], x[2][i]});
    CHECK(ya->value[i] >= lo - 1e-12);
    CHECK(ya->value[i] <= hi + 1e-12);
  }
}

TEST_CASE("fusion weight and input gradients") {
  std::mt19937_64 rng(8);
  ParamStore store;
  Rng r(0);
  FusionNode node(store, r, "n", 3, 2, false);
  node.raw_weights().value[0] = 0.4;
  node.raw_weights().value[1] = 1.3;
  node.raw_weights().value[2] = -0.7;  // rectified away
  node.raw_weights().grad = Tensor(node.raw_weights().value.shape());
  const Tensor rt = random_tensor(Shape{1, 2, 4, 4}, rng);
  auto f = [&](std::span<const Var> in) { return weighted_total(node.blend(in), rt); };
  const auto rep = check_gradients(f,
                                   {random_tensor(Shape{1, 2, 4, 4}, rng), random_tensor(Shape{1, 2, 4, 4}, rng),
                                    random_tensor(Shape{1, 2, 4, 4}, rng)},
                                   {&node.raw_weights()});
  CHECK(rep.max_rel < 1e-4);
  CHECK(node.raw_weights().grad[2] == 0.0);
}

TEST_CASE("fusion node rejects wrong arity") {
  ParamStore store;
  Rng r(0);
  CHECK_THROWS_AS(FusionNode(store, r, "bad", 4, 2, false), ConfigError);
  FusionNode node(store, r, "n", 2, 1, false);
  const std::array<Var, 3> three{scalar_map(1), scalar_map(2), scalar_map(3)};
  CHECK_THROWS_AS(node.blend(three), ShapeError);
}

TEST_CASE("SBiFPN pathways produce the documented levels and shapes") {
  ParamStore store;
  Rng rng(1);
  const SBiFPN neck(store, rng, NeckOptions{4, 1, true});
  CHECK(neck.fusion_node_count() == 16);
  ToyPyramid toy(3);
  const Pyramid p = toy.uniform(3);
  const Pyramid up = neck.top_down(p);
  const Pyramid dp = neck.bottom_up(p);
  CHECK(up.begin()->first == 2);
  CHECK(up.rbegin()->first == 6);
  CHECK(dp.begin()->first == 3);
  CHECK(dp.rbegin()->first == 7);
  CHECK(up.at(6).shape() == Shape{1, 4, 2, 2});
  CHECK(dp.at(3).shape() == Shape{1, 4, 16, 16});
  const Pyramid op = neck(p);
  for (int level = 2; level <= 7; ++level) {
    CHECK(op.at(level).shape().h == p.at(level).shape().h);
    CHECK(op.at(level).stride == level_stride(level));
  }
  CHECK(neck.up_node(6).arity() == 2);
  CHECK(neck.up_node(4).arity() == 3);
  CHECK(neck.down_node(3).arity() == 2);
  CHECK(neck.down_node(7).arity() == 3);
}

TEST_CASE("equal constants pass through bare fusion unchanged") {
  ParamStore store;
  Rng rng(1);
  const SBiFPN neck(store, rng, NeckOptions{2, 1, false});
  Pyramid p;
  for (int level = 2; level <= 7; ++level) {
    const int side = 32 >> (level - 2);
    p[level] = FeatureMap{constant(Tensor(Shape{1, 2, side, side}, 1.5)), level, level_stride(level)};
  }
  // Weights sum to K, so each blend is c * K / (K + eps).
  const Pyramid op = neck(p);
  for (int level = 2; level <= 7; ++level) {
    for (double v : op.at(level).data->value.values()) CHECK(std::abs(v - 1.5) < 1e-3);
  }
  const Pyramid up = neck.top_down(p);
  CHECK(std::abs(up.at(6).data->value[0] - 1.5 * 2.0 / (2.0 + kFusionEpsilon)) < 1e-15);
}

TEST_CASE("SBiFPN matches a scripted evaluation of the fusion equations") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ParamStore store;
    Rng rng(seed);
    ToyPyramid toy(seed + 10);
    const InputProjection proj(store, rng, toy.widths, toy.width);
    const SBiFPN neck(store, rng, NeckOptions{toy.width, 1, true});
    jitter_all(store, seed);
    randomize_fusion_weights(store, seed);
    const Pyramid op = neck(proj.normalize_inputs(toy.as_pyramid()));
    const auto ref = oracle::scripted_sbifpn(store, toy.as_maps());
    double worst = 0.0;
    for (int level = 2; level <= 7; ++level) {
      const auto got = oracle::from_tensor(op.at(level).data->value);
      REQUIRE(got.v.size() == ref.at(level).v.size());
      for (std::size_t i = 0; i < got.v.size(); ++i) worst = std::max(worst, std::abs(got.v[i] - ref.at(level).v[i]));
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("SBiFPN end-to-end gradient") {
  ParamStore store;
  Rng rng(5);
  ToyPyramid toy(6, 32);
  const SBiFPN neck(store, rng, NeckOptions{toy.width, 1, true});
  randomize_fusion_weights(store, 6);
  std::mt19937_64 r(9);
  std::map<int, Tensor> weights;
  for (int level = 2; level <= 7; ++level) {
    const int side = 32 >> (level - 2);
    weights[level] = random_tensor(Shape{1, toy.width, side, side}, r);
  }
  std::vector<Tensor> inputs;
  for (int level = 2; level <= 7; ++level) {
    inputs.push_back(level <= 5 ? random_tensor(Shape{1, toy.width, 32 >> (level - 2), 32 >> (level - 2)}, r)
                                : toy.c.at(level));
  }
  auto f = [&](std::span<const Var> in) {
    Pyramid p;
    for (int level = 2; level <= 7; ++level) p[level] = FeatureMap{in[level - 2], level, level_stride(level)};
    const Pyramid op = neck(p);
    Var total;
    for (int level = 2; level <= 7; ++level) {
      const Var t = weighted_total(op.at(level).data, weights.at(level));
      total = total ? add(total, t) : t;
    }
    return total;
  };
  std::vector<Parameter*> fusion;
  for (const auto& p : store.all()) {
    if (p->name.find(".weights") != std::string::npos || p->name == "neck.out4.conv.weight") fusion.push_back(p.get());
  }
  const auto rep = check_gradients(f, inputs, fusion, 1e-5, 40);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("alternative necks") {
  for (NeckKind kind : {NeckKind::fpn_panet, NeckKind::bifpn}) {
    ParamStore store;
    Rng rng(1);
    const auto neck = build_neck(kind, store, rng, NeckOptions{4, 1, true});
    CHECK(neck->kind() == kind);
    CHECK(neck->fusion_node_count() == 10);
    ToyPyramid toy(2);
    const Pyramid p = toy.uniform(2);
    const Pyramid op = (*neck)(p);
    for (int level = 2; level <= 7; ++level) CHECK(op.at(level).shape() == p.at(level).shape());
  }
  CHECK(parse_neck_kind("bifpn") == NeckKind::bifpn);
  CHECK(to_string(NeckKind::fpn_panet) == "fpn_panet");
  CHECK_THROWS_AS(parse_neck_kind("fpn"), ConfigError);
}

TEST_CASE("neck depth other than one is rejected") {
  ParamStore store;
  Rng rng(1);
  CHECK_THROWS_AS(build_neck(NeckKind::sbifpn, store, rng, NeckOptions{4, 0, true}), ConfigError);
  CHECK_THROWS_AS(build_neck(NeckKind::sbifpn, store, rng, NeckOptions{4, 2, true}), ConfigError);
}

TEST_CASE("incomplete pyramid is rejected") {
  ParamStore store;
  Rng rng(1);
  const SBiFPN neck(store, rng, NeckOptions{4, 1, false});
  ToyPyramid toy(1);
  Pyramid p = toy.uniform(1);
  p.erase(7);
  CHECK_THROWS_AS(neck(p), ShapeError);
}
