#include <doctest.h>

#include <random>

#include "eface/evaluation.hpp"
#include "support/oracles.hpp"
#include "support/small_model.hpp"

using namespace eface;
using namespace eface::testing;

namespace {

struct Instance {
  std::vector<BoxList> dets;
  std::vector<BoxList> gts;
};

Box jitter(const Box& b, std::mt19937_64& rng, double amount) {
  std::uniform_real_distribution<double> u(-amount, amount);
  const double w = b.width(), h = b.height();
  return Box{b.x1 + u(rng) * w, b.y1 + u(rng) * h, b.x2 + u(rng) * w, b.y2 + u(rng) * h};
}

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_img(1, 5), n_gt(0, 6), n_fp(0, 5);
  std::uniform_real_distribution<double> pos(0.0, 80.0), side(6.0, 40.0), score(0.0, 1.0);
  Instance inst;
  const int images = n_img(rng);
  for (int i = 0; i < images; ++i) {
    BoxList gt, det;
    const int g = n_gt(rng);
    for (int k = 0; k < g; ++k) {
      const double x = pos(rng), y = pos(rng);
      gt.add(Box{x, y, x + side(rng), y + side(rng)});
    }
    for (const Box& b : gt.boxes) {
      // Some faces found, some found twice, some missed.
      const int copies = static_cast<int>(rng() % 3);
      for (int c = 0; c < copies; ++c) det.add(jitter(b, rng, 0.25), std::round(score(rng) * 50.0) / 50.0);
    }
    const int fp = n_fp(rng);
    for (int k = 0; k < fp; ++k) {
      const double x = pos(rng), y = pos(rng);
      det.add(Box{x, y, x + side(rng), y + side(rng)}, std::round(score(rng) * 50.0) / 50.0);
    }
    inst.gts.push_back(gt);
    inst.dets.push_back(det);
  }
  return inst;
}

double oracle_ap(const Instance& inst, double thr) {
  std::vector<oracle::Det> dets;
  std::vector<std::vector<Box>> gts;
  for (std::size_t i = 0; i < inst.gts.size(); ++i) {
    gts.push_back(inst.gts[i].boxes);
    for (std::size_t k = 0; k < inst.dets[i].size(); ++k) {
      dets.push_back(oracle::Det{inst.dets[i].scores[k], i, inst.dets[i].boxes[k]});
    }
  }
  return oracle::brute_force_ap(dets, gts, thr);
}

}  // namespace

TEST_CASE("AP hand fixtures") {
  std::vector<BoxList> gts(1), dets(1);
  gts[0].add(Box{0, 0, 10, 10});
  dets[0].add(Box{0, 0, 10, 6}, 0.9);  // IoU 0.6
  CHECK(average_precision(dets, gts).ap == 1.0);

  std::vector<BoxList> dets2(1);
  dets2[0].add(Box{50, 50, 60, 60}, 0.9);
  dets2[0].add(Box{0, 0, 10, 10}, 0.8);
  const PRCurve c = average_precision(dets2, gts);
  CHECK(c.ap == 0.5);
  CHECK(c.true_positives == 1);
  REQUIRE(c.points.size() == 2);
  CHECK(c.points[0].precision == 0.0);
  CHECK(c.points[1].recall == 1.0);
  CHECK(c.points[1].precision == 0.5);
}

TEST_CASE("AP with no ground truth") {
  std::vector<BoxList> none(2);
  CHECK(average_precision(none, none).ap == 1.0);
  std::vector<BoxList> dets(2);
  dets[1].add(Box{0, 0, 4, 4}, 0.3);
  CHECK(average_precision(dets, none).ap == 0.0);
}

TEST_CASE("duplicate detections count once") {
  std::vector<BoxList> gts(1), dets(1);
  gts[0].add(Box{0, 0, 10, 10});
  dets[0].add(Box{0, 0, 10, 10}, 0.9);
  dets[0].add(Box{0, 0, 10, 10}, 0.8);
  const PRCurve c = average_precision(dets, gts);
  CHECK(c.true_positives == 1);
  CHECK(c.ap == 1.0);
}

TEST_CASE("AP equals the brute-force evaluator on random instances") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 50; ++t) {
    const Instance inst = random_instance(rng);
    for (double thr : {0.5, 0.7}) {
      const PRCurve c = average_precision(inst.dets, inst.gts, thr);
      CHECK(std::abs(c.ap - oracle_ap(inst, thr)) <= 1e-9);
      CHECK(c.ap >= 0.0);
      CHECK(c.ap <= 1.0);
      const auto env = c.envelope();
      for (std::size_t i = 1; i < env.size(); ++i) CHECK(env[i] <= env[i - 1]);
      for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].recall >= c.points[i - 1].recall);
    }
  }
}

TEST_CASE("AP monotonicity properties") {
  std::mt19937_64 rng(22);
  for (int t = 0; t < 50; ++t) {
    Instance inst = random_instance(rng);
    const double base = average_precision(inst.dets, inst.gts).ap;

    Instance with_fp = inst;
    with_fp.dets[0].add(Box{500, 500, 510, 510}, -1.0);
    CHECK(average_precision(with_fp.dets, with_fp.gts).ap <= base + 1e-12);

    // A perfect box for an unclaimed face, ranked first.
    Instance with_tp = inst;
    const Box face{200, 200, 230, 230};
    with_tp.gts[0].add(face);
    const double grown = average_precision(with_tp.dets, with_tp.gts).ap;
    with_tp.dets[0].add(face, 2.0);
    CHECK(average_precision(with_tp.dets, with_tp.gts).ap >= grown - 1e-12);
  }
}

TEST_CASE("subset selection by path or stem") {
  std::vector<ImageRecord> recs(3);
  recs[0].path = "a/img_1.jpg";
  recs[1].path = "b/img_2.jpg";
  recs[2].path = "c/img_3.jpg";
  const std::vector<std::string> names{"img_3", "b/img_2.jpg"};
  CHECK(select_subset(recs, names) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("aspect ratio histogram") {
  std::vector<ImageRecord> recs(1);
  recs[0].gt.add(Box{0, 0, 30, 10});
  recs[0].gt.add(Box{0, 0, 10, 30});
  recs[0].gt.add(Box{0, 0, 10, 10});
  const auto edges = default_aspect_bins();
  const Histogram h = aspect_ratio_histogram(recs, edges);
  std::size_t total = 0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    total += h.counts[i];
    if (h.counts[i] == 0) continue;
    const bool holds_third = edges[i] <= 1.0 / 3.0 && 1.0 / 3.0 < edges[i + 1];
    const bool holds_one = edges[i] <= 1.0 && 1.0 < edges[i + 1];
    const bool holds_three = edges[i] <= 3.0 && 3.0 < edges[i + 1];
    CHECK((holds_third || holds_one || holds_three));
    CHECK(h.counts[i] == 1);
  }
  CHECK(total == 3);
  CHECK(h.below == 0);
  CHECK(h.above == 0);

  const std::vector<double> edges2{1.0, 2.0, 4.0};
  const Histogram h2 = aspect_ratio_histogram(recs, edges2);
  CHECK(h2.counts == std::vector<std::size_t>{1, 1});
  CHECK(h2.below == 1);
}

TEST_CASE("synthetic aspect ratios stay inside the generator range") {
  SynthSpec spec;
  spec.min_faces = 2;
  spec.max_faces = 5;
  std::vector<ImageRecord> recs;
  for (const auto& s : synth_dataset(40, spec)) {
    ImageRecord r;
    r.gt = s.gt;
    recs.push_back(r);
  }
  const std::vector<double> edges{1.0 / 3.0 - 1e-9, 1.0, 3.0 + 1e-9};
  const Histogram h = aspect_ratio_histogram(recs, edges);
  CHECK(h.below == 0);
  CHECK(h.above == 0);
  CHECK(h.counts[0] + h.counts[1] > 80);
}

TEST_CASE("profiler conv fixtures") {
  ParamStore store;
  Rng rng(1);
  const Conv2d conv(store, rng, "c", 2, 4, 3, 3);
  const auto r = profile_run(store, [&] { conv(constant(Tensor(Shape{1, 2, 8, 8}))); });
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].macs == 4608);
  CHECK(r.entries[0].params == 76);
  CHECK(r.total_macs == 4608);

  ParamStore store2;
  const Conv2d pw(store2, rng, "p", 8, 8, 1, 1, 1, false);
  const auto r2 = profile_run(store2, [&] { pw(constant(Tensor(Shape{1, 8, 4, 4}))); });
  CHECK(r2.total_macs == 1024);
  CHECK(r2.total_params == 64);
}

TEST_CASE("shared layers count parameters once and MACs per call") {
  ParamStore store;
  Rng rng(1);
  const Conv2d conv(store, rng, "c", 2, 4, 3, 3);
  const auto r = profile_run(store, [&] {
    conv(constant(Tensor(Shape{1, 2, 8, 8})));
    conv(constant(Tensor(Shape{1, 2, 4, 4})));
  });
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].calls == 2);
  CHECK(r.total_params == 76);
  CHECK(r.total_macs == 4608 + 1152);
}

TEST_CASE("parameters outside recorded layers are reported as uncounted") {
  ParamStore store;
  Rng rng(1);
  const Conv2d conv(store, rng, "c", 2, 4, 3, 3);
  store.create("stray.table", Shape{1, 1, 3, 5});
  const auto r = profile_run(store, [&] { conv(constant(Tensor(Shape{1, 2, 8, 8}))); });
  CHECK(r.uncounted() == std::vector<std::string>{"stray.table"});
  CHECK(r.total_params == 76 + 15);
}

TEST_CASE("detector profile is additive over modules") {
  const auto model = build(small_config());
  const auto r = profile(*model, 128);
  std::int64_t params = 0, macs = 0;
  for (const auto& [module, n] : r.params_by_module()) {
    CHECK((module == "backbone" || module == "neck" || module == "enhance" || module == "head"));
    params += n;
  }
  for (const auto& [module, n] : r.macs_by_module()) macs += n;
  CHECK(params == r.total_params);
  CHECK(macs == r.total_macs);
  CHECK(r.params_by_module().size() == 4);
  CHECK(module_of("neck.up3") == "neck");
  CHECK(module_of("attn.p2.unit0.spatial.conv") == "enhance");
  CHECK(module_of("extend.c6") == "backbone");
}

TEST_CASE("totals grow with the backbone tag") {
  std::int64_t prev_params = 0, prev_macs = 0;
  for (const char* tag : {"tiny", "b0", "b1", "b2", "b3", "b4", "b5"}) {
    DetectorConfig cfg;
    cfg.backbone = BackboneConfig::from_tag(tag);
    const auto r = profile(*build(cfg), 128);
    CHECK_MESSAGE(r.total_params > prev_params, tag);
    CHECK_MESSAGE(r.total_macs > prev_macs, tag);
    prev_params = r.total_params;
    prev_macs = r.total_macs;
  }
}
