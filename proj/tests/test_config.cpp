#include <doctest.h>

#include "eface/config.hpp"
#include "eface/errors.hpp"

using namespace eface;

TEST_CASE("key-value parsing") {
  const auto kv = KeyValueConfig::parse("# comment\nneck.kind = bifpn\n\nhead.depth=3  # trailing\n");
  CHECK(kv.get_string("neck.kind", "") == "bifpn");
  CHECK(kv.get_int("head.depth", 0) == 3);
  CHECK(kv.get_int("missing", 7) == 7);
  CHECK_FALSE(kv.contains("missing"));
}

TEST_CASE("malformed lines report their line number") {
  try {
    KeyValueConfig::parse("a=1\nb=2\njust text\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  const auto kv = KeyValueConfig::parse("x=abc\n");
  CHECK_THROWS(kv.get_int("x", 0));
}

TEST_CASE("unknown keys are rejected") {
  auto kv = KeyValueConfig::parse("head.dpeth=3\n");
  try {
    detector_config_from(kv);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("head.dpeth") != std::string::npos);
  }
}

TEST_CASE("detector config round-trips through key values") {
  DetectorConfig cfg;
  cfg.backbone = BackboneConfig::from_tag("b2");
  cfg.pyramid_width = 64;
  cfg.neck = NeckKind::fpn_panet;
  cfg.use_attention = false;
  cfg.attn_depth = 4;
  cfg.head_depth = 2;
  cfg.infer.score_thr = 0.3;
  cfg.loss.alpha_t = 0.3;
  cfg.seed = 99;
  const KeyValueConfig kv = to_key_values(cfg);
  const DetectorConfig back = detector_config_from(KeyValueConfig::parse(kv.text()));
  CHECK(to_key_values(back).text() == kv.text());
  CHECK(back.neck == NeckKind::fpn_panet);
  CHECK(back.backbone.stage_widths == cfg.backbone.stage_widths);
  CHECK(back.infer.score_thr == 0.3);
  CHECK(back.seed == 99);
}

TEST_CASE("merge overlays keys") {
  auto a = KeyValueConfig::parse("x=1\ny=2\n");
  a.merge(KeyValueConfig::parse("y=3\nz=4\n"));
  CHECK(a.get_int("x", 0) == 1);
  CHECK(a.get_int("y", 0) == 3);
  CHECK(a.get_int("z", 0) == 4);
  a.erase("z");
  CHECK_FALSE(a.contains("z"));
}
