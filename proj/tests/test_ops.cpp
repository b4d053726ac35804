#include <doctest.h>

#include <array>
#include <cmath>

#include "eface/errors.hpp"
#include "eface/nn.hpp"
#include "eface/ops.hpp"
#include "support/gradcheck.hpp"

using namespace eface;
using eface::testing::check_gradients;
using eface::testing::random_tensor;
using eface::testing::weighted_total;

namespace {

constexpr double kTol = 1e-4;

Parameter& random_param(ParamStore& store, const std::string& name, Shape s, std::mt19937_64& rng) {
  Parameter& p = store.create(name, s);
  p.value = random_tensor(s, rng, -0.5, 0.5);
  p.grad = Tensor(s);
  return p;
}

}  // namespace

TEST_CASE("tensor layout is NCHW") {
  Tensor t(Shape{2, 3, 4, 5});
  t.at(1, 2, 3, 4) = 7.0;
  CHECK(t.index(1, 2, 3, 4) == t.size() - 1);
  CHECK(t[t.size() - 1] == 7.0);
  CHECK(t.batch_item(1).at(0, 2, 3, 4) == 7.0);
  const std::array<Tensor, 2> parts{t.batch_item(0), t.batch_item(1)};
  CHECK(max_abs_diff(Tensor::stack(parts), t) == 0.0);
}

TEST_CASE("conv2d gradients: 3x3, strided, and asymmetric kernels") {
  std::mt19937_64 rng(3);
  struct Case {
    int kh, kw, stride;
  };
  for (const Case c : {Case{3, 3, 1}, Case{3, 3, 2}, Case{1, 5, 1}, Case{5, 1, 1}, Case{1, 1, 1}}) {
    CAPTURE(c.kh);
    CAPTURE(c.kw);
    CAPTURE(c.stride);
    ParamStore store;
    Parameter& w = random_param(store, "w", Shape{3, 2, c.kh, c.kw}, rng);
    Parameter& b = random_param(store, "b", Shape{1, 3, 1, 1}, rng);
    const Tensor x = random_tensor(Shape{2, 2, 6, 6}, rng);
    const int oh = c.stride == 1 ? 6 : 3;
    const Tensor r = random_tensor(Shape{2, 3, oh, oh}, rng);
    auto f = [&](std::span<const Var> in) {
      return weighted_total(conv2d(in[0], w, &b, ConvGeometry{c.stride, c.kh / 2, c.kw / 2}), r);
    };
    const auto rep = check_gradients(f, {x}, {&w, &b});
    CHECK(rep.max_rel < kTol);
  }
}

TEST_CASE("group_norm gradient") {
  std::mt19937_64 rng(5);
  ParamStore store;
  Parameter& g = random_param(store, "g", Shape{1, 4, 1, 1}, rng);
  Parameter& b = random_param(store, "b", Shape{1, 4, 1, 1}, rng);
  const Tensor x = random_tensor(Shape{2, 4, 3, 3}, rng);
  const Tensor r = random_tensor(Shape{2, 4, 3, 3}, rng);
  auto f = [&](std::span<const Var> in) { return weighted_total(group_norm(in[0], g, b, 2), r); };
  CHECK(check_gradients(f, {x}, {&g, &b}).max_rel < kTol);
}

TEST_CASE("group_norm normalizes each group") {
  ParamStore store;
  Parameter& g = store.create("g", Shape{1, 4, 1, 1});
  g.value.fill(1.0);
  Parameter& b = store.create("b", Shape{1, 4, 1, 1});
  std::mt19937_64 rng(1);
  const Var y = group_norm(constant(random_tensor(Shape{1, 4, 4, 4}, rng, 0.0, 10.0)), g, b, 2);
  for (int grp = 0; grp < 2; ++grp) {
    double sum = 0.0, sq = 0.0;
    for (int c = 2 * grp; c < 2 * grp + 2; ++c)
      for (int i = 0; i < 16; ++i) {
        const double v = y->value.plane(0, c)[i];
        sum += v;
        sq += v * v;
      }
    CHECK(sum / 32 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(sq / 32 == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("elementwise op gradients") {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor(Shape{1, 3, 4, 4}, rng, -3.0, 3.0);
  const Tensor b = random_tensor(Shape{1, 3, 4, 4}, rng);
  const Tensor r = random_tensor(Shape{1, 3, 4, 4}, rng);
  SUBCASE("sigmoid") {
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(sigmoid(in[0]), r); }, {a}, {})
              .max_rel < kTol);
  }
  SUBCASE("silu") {
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(silu(in[0]), r); }, {a}, {}).max_rel <
          kTol);
  }
  SUBCASE("add and add_scaled") {
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(add(in[0], in[1]), r); }, {a, b}, {})
              .max_rel < kTol);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(add_scaled(in[0], in[1], 0.3), r); },
                          {a, b}, {})
              .max_rel < kTol);
  }
}

TEST_CASE("broadcast, pooling, resampling and concat gradients") {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor(Shape{2, 3, 4, 4}, rng);
  SUBCASE("pixel gate") {
    const Tensor g = random_tensor(Shape{2, 1, 4, 4}, rng);
    const Tensor r = random_tensor(x.shape(), rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(mul_broadcast(in[0], in[1]), r); },
                          {x, g}, {})
              .max_rel < kTol);
  }
  SUBCASE("channel gate") {
    const Tensor g = random_tensor(Shape{2, 3, 1, 1}, rng);
    const Tensor r = random_tensor(x.shape(), rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(mul_broadcast(in[0], in[1]), r); },
                          {x, g}, {})
              .max_rel < kTol);
  }
  SUBCASE("max_pool2") {
    const Tensor r = random_tensor(Shape{2, 3, 2, 2}, rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(max_pool2(in[0]), r); }, {x}, {})
              .max_rel < kTol);
  }
  SUBCASE("upsample2") {
    const Tensor r = random_tensor(Shape{2, 3, 8, 8}, rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(upsample2(in[0]), r); }, {x}, {})
              .max_rel < kTol);
  }
  SUBCASE("concat_channels") {
    const Tensor y = random_tensor(Shape{2, 2, 4, 4}, rng);
    const Tensor r = random_tensor(Shape{2, 5, 4, 4}, rng);
    auto f = [&](std::span<const Var> in) {
      const std::array<Var, 2> parts{in[0], in[1]};
      return weighted_total(concat_channels(parts), r);
    };
    CHECK(check_gradients(f, {x, y}, {}).max_rel < kTol);
  }
  SUBCASE("channel_stats") {
    const Tensor r = random_tensor(Shape{2, 2, 4, 4}, rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(channel_stats(in[0]), r); }, {x}, {})
              .max_rel < kTol);
  }
  SUBCASE("global_stats") {
    const Tensor r = random_tensor(Shape{2, 6, 1, 1}, rng);
    CHECK(check_gradients([&](std::span<const Var> in) { return weighted_total(global_stats(in[0]), r); }, {x}, {})
              .max_rel < kTol);
  }
}

TEST_CASE("pooling and resampling values") {
  Tensor x(Shape{1, 1, 2, 2}, {1, 5, 3, 2});
  CHECK(max_pool2(constant(x))->value[0] == 5.0);
  const Var up = upsample2(constant(x));
  CHECK(up->shape() == Shape{1, 1, 4, 4});
  CHECK(up->value.at(0, 0, 1, 1) == 1.0);
  CHECK(up->value.at(0, 0, 3, 2) == 2.0);
  CHECK_THROWS_AS(max_pool2(constant(Tensor(Shape{1, 1, 3, 3}))), ShapeError);
}

TEST_CASE("conv2d geometry keeps or halves the extent") {
  ParamStore store;
  Rng rng(1);
  const Conv2d same(store, rng, "same", 2, 4, 3, 3);
  const Conv2d half(store, rng, "half", 2, 4, 3, 3, 2);
  const Var x = constant(Tensor(Shape{1, 2, 8, 8}, 1.0));
  CHECK(same(x)->shape() == Shape{1, 4, 8, 8});
  CHECK(half(x)->shape() == Shape{1, 4, 4, 4});
}

TEST_CASE("default_groups picks the largest divisor up to 8") {
  CHECK(default_groups(288) == 8);
  CHECK(default_groups(24) == 8);
  CHECK(default_groups(12) == 6);
  CHECK(default_groups(7) == 7);
  CHECK(default_groups(11) == 1);
}

TEST_CASE("no-grad mode keeps no graph") {
  ParamStore store;
  Rng rng(1);
  const Conv2d conv(store, rng, "c", 1, 1, 3, 3);
  NoGradGuard guard;
  const Var y = conv(variable(Tensor(Shape{1, 1, 4, 4}, 1.0)));
  CHECK_FALSE(y->requires_grad);
  CHECK(y->inputs.empty());
}
