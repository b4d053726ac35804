#include "eface/sbifpn.hpp"

#include <array>

#include "eface/errors.hpp"

namespace eface {

FusionNode::FusionNode(ParamStore& store, Rng& rng, const std::string& name, int arity, int width,
                       bool with_transform, double epsilon)
    : name_(name), arity_(arity), epsilon_(epsilon) {
  if (arity < 2 || arity > 3) throw ConfigError("fusion node '" + name + "' must take 2 or 3 inputs");
  if (!(epsilon > 0.0)) throw ConfigError("fusion epsilon must be positive");
  raw_weights_ = &store.create(name + ".weights", Shape{1, arity, 1, 1}, false);
  raw_weights_->value.fill(1.0);
  if (with_transform) transform_.emplace(store, rng, name, width, width, 3, 1, true, true);
}

Var FusionNode::blend(std::span<const Var> inputs) const {
  if (static_cast<int>(inputs.size()) != arity_) {
    throw ShapeError("fusion node '" + name_ + "' takes " + std::to_string(arity_) + " inputs, got " +
                     std::to_string(inputs.size()));
  }
  Var out = weighted_sum(inputs, *raw_weights_, epsilon_);
  if (OpRecorder* rec = active_recorder()) {
    rec->record(OpRecord{name_, "fusion", arity_, static_cast<std::int64_t>(arity_) *
                                                      static_cast<std::int64_t>(out->value.size())});
  }
  return out;
}

Var FusionNode::operator()(std::span<const Var> inputs) const {
  Var mixed = blend(inputs);
  return transform_ ? (*transform_)(mixed) : mixed;
}

std::vector<double> FusionNode::normalized_weights() const {
  return normalized_fusion_weights(raw_weights_->value.values(), epsilon_);
}

Var fuse_weighted(std::span<const Var> inputs, const FusionNode& node) { return node(inputs); }

NeckKind parse_neck_kind(std::string_view tag) {
  if (tag == "sbifpn") return NeckKind::sbifpn;
  if (tag == "fpn_panet") return NeckKind::fpn_panet;
  if (tag == "bifpn") return NeckKind::bifpn;
  throw ConfigError("unknown neck '" + std::string(tag) + "' (expected sbifpn, fpn_panet or bifpn)");
}

std::string_view to_string(NeckKind kind) {
  switch (kind) {
    case NeckKind::sbifpn:
      return "sbifpn";
    case NeckKind::fpn_panet:
      return "fpn_panet";
    case NeckKind::bifpn:
      return "bifpn";
  }
  return "unknown";
}

namespace {

FeatureMap at_level(Var v, int level) { return FeatureMap{std::move(v), level, level_stride(level)}; }

Var fuse2(const FusionNode& node, Var a, Var b) {
  const std::array<Var, 2> in{std::move(a), std::move(b)};
  return node(in);
}

Var fuse3(const FusionNode& node, Var a, Var b, Var c) {
  const std::array<Var, 3> in{std::move(a), std::move(b), std::move(c)};
  return node(in);
}

std::string node_name(const char* path, int level) { return std::string("neck.") + path + std::to_string(level); }

}  // namespace

SBiFPN::SBiFPN(ParamStore& store, Rng& rng, const NeckOptions& opts) {
  for (int level = 2; level <= 6; ++level) {
    up_.emplace_back(store, rng, node_name("up", level), level == 6 ? 2 : 3, opts.width, opts.fusion_transform);
  }
  for (int level = 3; level <= 7; ++level) {
    down_.emplace_back(store, rng, node_name("down", level), level == 3 ? 2 : 3, opts.width, opts.fusion_transform);
  }
  for (int level = 2; level <= 7; ++level) {
    out_.emplace_back(store, rng, node_name("out", level), 2, opts.width, opts.fusion_transform);
  }
}

std::size_t SBiFPN::fusion_node_count() const { return up_.size() + down_.size() + out_.size(); }

Pyramid SBiFPN::top_down(const Pyramid& p) const {
  check_pyramid(p, 2, 7);
  Pyramid up;
  up[6] = at_level(fuse2(up_node(6), p.at(6).data, upsample2(p.at(7).data)), 6);
  for (int level = 5; level >= 2; --level) {
    up[level] = at_level(
        fuse3(up_node(level), p.at(level).data, upsample2(p.at(level + 1).data), upsample2(up.at(level + 1).data)),
        level);
  }
  return up;
}

Pyramid SBiFPN::bottom_up(const Pyramid& p) const {
  check_pyramid(p, 2, 7);
  Pyramid dp;
  dp[3] = at_level(fuse2(down_node(3), p.at(3).data, max_pool2(p.at(2).data)), 3);
  for (int level = 4; level <= 7; ++level) {
    dp[level] = at_level(fuse3(down_node(level), p.at(level).data, max_pool2(p.at(level - 1).data),
                               max_pool2(dp.at(level - 1).data)),
                         level);
  }
  return dp;
}

Pyramid SBiFPN::blend_outputs(const Pyramid& p, const Pyramid& up, const Pyramid& dp) const {
  check_pyramid(p, 2, 7);
  check_pyramid(up, 2, 6);
  check_pyramid(dp, 3, 7);
  Pyramid op;
  op[2] = at_level(fuse2(out_node(2), p.at(2).data, up.at(2).data), 2);
  for (int level = 3; level <= 6; ++level) {
    op[level] = at_level(fuse2(out_node(level), up.at(level).data, dp.at(level).data), level);
  }
  op[7] = at_level(fuse2(out_node(7), p.at(7).data, dp.at(7).data), 7);
  return op;
}

Pyramid SBiFPN::operator()(const Pyramid& p) const { return blend_outputs(p, top_down(p), bottom_up(p)); }

FpnPanet::FpnPanet(ParamStore& store, Rng& rng, const NeckOptions& opts) {
  for (int level = 2; level <= 6; ++level) {
    td_.emplace_back(store, rng, node_name("fpn", level), 2, opts.width, opts.fusion_transform);
  }
  for (int level = 3; level <= 7; ++level) {
    bu_.emplace_back(store, rng, node_name("pan", level), 2, opts.width, opts.fusion_transform);
  }
}

Pyramid FpnPanet::operator()(const Pyramid& p) const {
  check_pyramid(p, 2, 7);
  std::map<int, Var> td;
  td[7] = p.at(7).data;
  for (int level = 6; level >= 2; --level) {
    td[level] = fuse2(td_[level - 2], p.at(level).data, upsample2(td.at(level + 1)));
  }
  Pyramid out;
  out[2] = at_level(td.at(2), 2);
  for (int level = 3; level <= 7; ++level) {
    out[level] = at_level(fuse2(bu_[level - 3], td.at(level), max_pool2(out.at(level - 1).data)), level);
  }
  return out;
}

BiFPN::BiFPN(ParamStore& store, Rng& rng, const NeckOptions& opts) {
  for (int level = 2; level <= 6; ++level) {
    td_.emplace_back(store, rng, node_name("td", level), 2, opts.width, opts.fusion_transform);
  }
  for (int level = 3; level <= 7; ++level) {
    bu_.emplace_back(store, rng, node_name("bu", level), level == 7 ? 2 : 3, opts.width, opts.fusion_transform);
  }
}

Pyramid BiFPN::operator()(const Pyramid& p) const {
  check_pyramid(p, 2, 7);
  std::map<int, Var> td;
  td[7] = p.at(7).data;
  for (int level = 6; level >= 2; --level) {
    td[level] = fuse2(td_[level - 2], p.at(level).data, upsample2(td.at(level + 1)));
  }
  Pyramid out;
  out[2] = at_level(td.at(2), 2);
  for (int level = 3; level <= 6; ++level) {
    out[level] =
        at_level(fuse3(bu_[level - 3], p.at(level).data, td.at(level), max_pool2(out.at(level - 1).data)), level);
  }
  out[7] = at_level(fuse2(bu_[4], p.at(7).data, max_pool2(out.at(6).data)), 7);
  return out;
}

std::unique_ptr<Neck> build_neck(NeckKind kind, ParamStore& store, Rng& rng, const NeckOptions& opts) {
  if (opts.depth < 1) throw ConfigError("neck depth must be at least 1");
  if (opts.depth != 1) throw ConfigError("only single-iteration necks are supported (depth 1)");
  if (opts.width <= 0) throw ConfigError("pyramid width must be positive");
  switch (kind) {
    case NeckKind::sbifpn:
      return std::make_unique<SBiFPN>(store, rng, opts);
    case NeckKind::fpn_panet:
      return std::make_unique<FpnPanet>(store, rng, opts);
    case NeckKind::bifpn:
      return std::make_unique<BiFPN>(store, rng, opts);
  }
  throw ConfigError("unknown neck kind");
}

}  // namespace eface
