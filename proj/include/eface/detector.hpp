#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "eface/boxes.hpp"
#include "eface/feature_enhance.hpp"
#include "eface/losses.hpp"
#include "eface/pyramid_features.hpp"
#include "eface/sbifpn.hpp"

namespace eface {

struct InferConfig {
  double score_thr = 0.02;
  double nms_iou = 0.5;
  int topk_per_level = 1000;
  int max_det = 750;
};

struct DetectorConfig {
  BackboneConfig backbone;
  int pyramid_width = 288;
  NeckKind neck = NeckKind::sbifpn;
  int neck_depth = 1;
  bool use_rfe = true;
  int rfe_reduction = RFEBlock::kDefaultReduction;
  bool use_attention = true;
  int attn_depth = AttentionStack::kDefaultDepth;
  int head_depth = 4;
  int head_width = 288;
  double prior_prob = 0.01;
  AnchorConfig anchors;
  LossConfig loss;
  InferConfig infer;
  std::uint64_t seed = 0;

  // Collects every invalid field into one ConfigError.
  void validate() const;
};

// Per-level head outputs: cls [N,1,H,W] logits, reg [N,4,H,W] deltas.
struct LevelOutput {
  int level = 0;
  int stride = 0;
  Var cls;
  Var reg;
};

// Classification and regression towers shared by every pyramid level.
class DetectionHead {
 public:
  DetectionHead(ParamStore& store, Rng& rng, int in_width, int width, int depth, double prior_prob);

  LevelOutput operator()(const FeatureMap& f) const;

  const Conv2d& cls_output() const { return cls_out_; }
  const Conv2d& reg_output() const { return reg_out_; }

 private:
  std::vector<ConvNormAct> cls_tower_;
  std::vector<ConvNormAct> reg_tower_;
  Conv2d cls_out_;
  Conv2d reg_out_;
};

// backbone -> C6/C7 -> lateral projection -> neck -> per-level RFE ->
// per-level attention -> shared head.
class Detector {
 public:
  explicit Detector(const DetectorConfig& cfg);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  const DetectorConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // images: [N,3,H,W] with values in [0,1].
  Pyramid backbone_levels(const Tensor& images) const;
  Pyramid pyramid_inputs(const Pyramid& c) const;
  Pyramid enhanced_features(const Tensor& images) const;
  std::vector<LevelOutput> forward(const Tensor& images) const;

  // Single image [1,3,H,W]; score-sorted detections after NMS.
  BoxList detect(const Tensor& image) const;
  BoxList detect(const Tensor& image, const InferConfig& infer) const;

  const Neck& neck() const { return *neck_; }
  const DetectionHead& head() const { return head_; }

 private:
  DetectorConfig cfg_;
  ParamStore store_;
  Rng rng_;
  StageBackbone backbone_;
  LevelExtension extension_;
  InputProjection projection_;
  std::unique_ptr<Neck> neck_;
  std::vector<RFEBlock> rfe_;
  std::vector<AttentionStack> attention_;
  DetectionHead head_;
};

std::unique_ptr<Detector> build(const DetectorConfig& cfg);

// Converts one level's head outputs for one sample into scored boxes.
BoxList decode_level(const LevelOutput& out, int sample, const AnchorLevel& anchors, const AnchorSet& set,
                     double score_thr, int topk);

}  // namespace eface
