#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eface/pyramid_features.hpp"

namespace eface {

inline constexpr double kFusionEpsilon = 1e-4;

// One weighted fusion site: K learnable scalars blended with fast normalized
// fusion, then a 3x3 conv -> norm -> SiLU at pyramid width. The transform can
// be disabled to expose the bare blend.
class FusionNode {
 public:
  FusionNode(ParamStore& store, Rng& rng, const std::string& name, int arity, int width, bool with_transform,
             double epsilon = kFusionEpsilon);

  Var operator()(std::span<const Var> inputs) const;
  // The weighted sum alone, before the conv transform.
  Var blend(std::span<const Var> inputs) const;

  const std::string& name() const { return name_; }
  int arity() const { return arity_; }
  double epsilon() const { return epsilon_; }
  Parameter& raw_weights() const { return *raw_weights_; }
  std::vector<double> normalized_weights() const;
  const ConvNormAct* transform() const { return transform_ ? &*transform_ : nullptr; }

 private:
  std::string name_;
  int arity_;
  double epsilon_;
  Parameter* raw_weights_;
  std::optional<ConvNormAct> transform_;
};

Var fuse_weighted(std::span<const Var> inputs, const FusionNode& node);

enum class NeckKind { sbifpn, fpn_panet, bifpn };

NeckKind parse_neck_kind(std::string_view tag);
std::string_view to_string(NeckKind kind);

struct NeckOptions {
  int width = 288;
  int depth = 1;
  bool fusion_transform = true;
};

// Maps P2..P7 to fused outputs at the same levels and extents.
class Neck {
 public:
  virtual ~Neck() = default;
  virtual Pyramid operator()(const Pyramid& p) const = 0;
  virtual NeckKind kind() const = 0;
  virtual std::size_t fusion_node_count() const = 0;
};

// Top-down and bottom-up pathways both start from P and run in parallel;
// their outputs are then blended level by level.
class SBiFPN final : public Neck {
 public:
  SBiFPN(ParamStore& store, Rng& rng, const NeckOptions& opts);

  // UP6 = fuse(P6, up(P7)); UP_i = fuse(P_i, up(P_i+1), up(UP_i+1)) for i = 5..2.
  Pyramid top_down(const Pyramid& p) const;
  // DP3 = fuse(P3, down(P2)); DP_i = fuse(P_i, down(P_i-1), down(DP_i-1)) for i = 4..7.
  Pyramid bottom_up(const Pyramid& p) const;
  // OP2 = fuse(P2, UP2); OP7 = fuse(P7, DP7); OP_i = fuse(UP_i, DP_i) otherwise.
  Pyramid blend_outputs(const Pyramid& p, const Pyramid& up, const Pyramid& dp) const;

  Pyramid operator()(const Pyramid& p) const override;
  NeckKind kind() const override { return NeckKind::sbifpn; }
  std::size_t fusion_node_count() const override;

  const FusionNode& up_node(int level) const { return up_.at(level - 2); }
  const FusionNode& down_node(int level) const { return down_.at(level - 3); }
  const FusionNode& out_node(int level) const { return out_.at(level - 2); }

 private:
  std::vector<FusionNode> up_;    // levels 2..6
  std::vector<FusionNode> down_;  // levels 3..7
  std::vector<FusionNode> out_;   // levels 2..7
};

// Top-down FPN followed by a PANet bottom-up pass over its outputs.
class FpnPanet final : public Neck {
 public:
  FpnPanet(ParamStore& store, Rng& rng, const NeckOptions& opts);

  Pyramid operator()(const Pyramid& p) const override;
  NeckKind kind() const override { return NeckKind::fpn_panet; }
  std::size_t fusion_node_count() const override { return td_.size() + bu_.size(); }

 private:
  std::vector<FusionNode> td_;  // levels 2..6
  std::vector<FusionNode> bu_;  // levels 3..7
};

// One BiFPN layer: intermediate top-down nodes, bottom-up outputs with a
// skip connection from P at the middle levels.
class BiFPN final : public Neck {
 public:
  BiFPN(ParamStore& store, Rng& rng, const NeckOptions& opts);

  Pyramid operator()(const Pyramid& p) const override;
  NeckKind kind() const override { return NeckKind::bifpn; }
  std::size_t fusion_node_count() const override { return td_.size() + bu_.size(); }

 private:
  std::vector<FusionNode> td_;  // levels 2..6
  std::vector<FusionNode> bu_;  // levels 3..7
};

std::unique_ptr<Neck> build_neck(NeckKind kind, ParamStore& store, Rng& rng, const NeckOptions& opts);

}  // namespace eface
