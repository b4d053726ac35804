#include "eface/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "eface/errors.hpp"

namespace eface {

void DetectorConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  try {
    backbone.validate();
  } catch (const ConfigError& e) {
    problems.push_back(std::string("backbone: ") + e.what());
  }
  check(pyramid_width > 0, "pyramid_width must be positive");
  check(neck_depth == 1, "neck.depth must be 1");
  check(!use_rfe || (rfe_reduction > 0 && pyramid_width % (4 * rfe_reduction) == 0),
        "pyramid_width must be divisible by 4*rfe.reduction when RFE is enabled");
  check(attn_depth >= 0, "attn_depth must be non-negative");
  check(head_depth >= 1, "head.depth must be at least 1");
  check(head_width > 0, "head.width must be positive");
  check(prior_prob > 0.0 && prior_prob < 1.0, "head.prior_prob must lie in (0,1)");
  try {
    anchors.validate();
  } catch (const ConfigError& e) {
    problems.push_back(std::string("anchors: ") + e.what());
  }
  try {
    loss.validate();
  } catch (const ConfigError& e) {
    problems.push_back(std::string("loss: ") + e.what());
  }
  check(infer.score_thr >= 0.0 && infer.score_thr < 1.0, "infer.score_thr must lie in [0,1)");
  check(infer.nms_iou > 0.0 && infer.nms_iou <= 1.0, "infer.nms_iou must lie in (0,1]");
  check(infer.topk_per_level > 0, "infer.topk_per_level must be positive");
  check(infer.max_det > 0, "infer.max_det must be positive");
  if (problems.empty()) return;
  std::ostringstream os;
  os << "invalid detector configuration:";
  for (const auto& p : problems) os << "\n  - " << p;
  throw ConfigError(os.str());
}

DetectionHead::DetectionHead(ParamStore& store, Rng& rng, int in_width, int width, int depth, double prior_prob) {
  int in = in_width;
  for (int d = 0; d < depth; ++d) {
    cls_tower_.emplace_back(store, rng, "head.cls.tower" + std::to_string(d), in, width, 3, 1, true, true);
    in = width;
  }
  in = in_width;
  for (int d = 0; d < depth; ++d) {
    reg_tower_.emplace_back(store, rng, "head.reg.tower" + std::to_string(d), in, width, 3, 1, true, true);
    in = width;
  }
  cls_out_ = Conv2d(store, rng, "head.cls.out", width, 1, 3, 3, 1, true, Init::small);
  cls_out_.bias()->value.fill(-std::log((1.0 - prior_prob) / prior_prob));
  reg_out_ = Conv2d(store, rng, "head.reg.out", width, 4, 3, 3, 1, true, Init::small);
}

LevelOutput DetectionHead::operator()(const FeatureMap& f) const {
  Var c = f.data;
  for (const auto& layer : cls_tower_) c = layer(c);
  Var r = f.data;
  for (const auto& layer : reg_tower_) r = layer(r);
  return LevelOutput{f.level, f.stride, cls_out_(c), reg_out_(r)};
}

namespace {

const DetectorConfig& validated(const DetectorConfig& cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

Detector::Detector(const DetectorConfig& cfg)
    : cfg_(validated(cfg)),
      rng_(cfg.seed),
      backbone_(store_, rng_, cfg.backbone),
      extension_(store_, rng_, cfg.backbone.stage_widths[3], cfg.pyramid_width),
      projection_(store_, rng_, cfg.backbone.stage_widths, cfg.pyramid_width),
      neck_(build_neck(cfg.neck, store_, rng_, NeckOptions{cfg.pyramid_width, cfg.neck_depth, true})),
      head_([&]() -> DetectionHead {
        // Enhancement blocks are created before the head so parameter order
        // follows the forward path.
        for (int level = kMinLevel; level <= kMaxLevel; ++level) {
          const std::string tag = "p" + std::to_string(level);
          if (cfg.use_rfe) rfe_.emplace_back(store_, rng_, "rfe." + tag, cfg.pyramid_width, cfg.rfe_reduction);
          if (cfg.use_attention && cfg.attn_depth > 0) {
            attention_.emplace_back(store_, rng_, "attn." + tag, cfg.pyramid_width, cfg.attn_depth);
          }
        }
        return DetectionHead(store_, rng_, cfg.pyramid_width, cfg.head_width, cfg.head_depth, cfg.prior_prob);
      }()) {}

Pyramid Detector::backbone_levels(const Tensor& images) const {
  Tensor normalized(images.shape());
  for (std::size_t i = 0; i < images.size(); ++i) normalized[i] = (images[i] - 0.5) * 4.0;
  return extract_levels(constant(std::move(normalized)), backbone_);
}

Pyramid Detector::pyramid_inputs(const Pyramid& c) const {
  return projection_.normalize_inputs(extension_.extend_levels(c));
}

Pyramid Detector::enhanced_features(const Tensor& images) const {
  Pyramid features = (*neck_)(pyramid_inputs(backbone_levels(images)));
  for (auto& [level, fm] : features) {
    const std::size_t idx = static_cast<std::size_t>(level - kMinLevel);
    if (!rfe_.empty()) fm.data = rfe_[idx](fm.data);
    if (!attention_.empty()) fm.data = attention_[idx](fm.data);
  }
  return features;
}

std::vector<LevelOutput> Detector::forward(const Tensor& images) const {
  const Pyramid features = enhanced_features(images);
  std::vector<LevelOutput> out;
  out.reserve(features.size());
  for (const auto& [level, fm] : features) {
    LevelOutput lo = head_(fm);
    const Shape& s = fm.shape();
    if (lo.cls->shape() != Shape{s.n, 1, s.h, s.w} || lo.reg->shape() != Shape{s.n, 4, s.h, s.w}) {
      throw ShapeError("head output at level " + std::to_string(level) + " has unexpected shape");
    }
    out.push_back(std::move(lo));
  }
  return out;
}

BoxList decode_level(const LevelOutput& out, int sample, const AnchorLevel& anchors, const AnchorSet& set,
                     double score_thr, int topk) {
  const Shape& s = out.cls->shape();
  if (static_cast<std::size_t>(s.plane()) != anchors.count()) {
    throw ShapeError("level " + std::to_string(out.level) + " output does not match its anchor grid");
  }
  const double* logits = out.cls->value.plane(sample, 0);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < s.plane(); ++i) {
    const double score = 1.0 / (1.0 + std::exp(-logits[i]));
    if (score > score_thr) cand.emplace_back(score, i);
  }
  std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (cand.size() > static_cast<std::size_t>(topk)) cand.resize(static_cast<std::size_t>(topk));
  BoxList boxes;
  for (const auto& [score, i] : cand) {
    Deltas d;
    for (int k = 0; k < 4; ++k) d[k] = out.reg->value.plane(sample, k)[i];
    boxes.add(decode_box(set.anchors.boxes[anchors.offset + i], d), score);
  }
  return boxes;
}

BoxList Detector::detect(const Tensor& image) const { return detect(image, cfg_.infer); }

BoxList Detector::detect(const Tensor& image, const InferConfig& infer) const {
  if (image.shape().n != 1) throw ShapeError("detect expects a single image, got " + image.shape().str());
  NoGradGuard no_grad;
  const std::vector<LevelOutput> outputs = forward(image);
  const AnchorSet set = generate_anchors(image.shape().h, image.shape().w, cfg_.anchors);
  BoxList all;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const BoxList level = decode_level(outputs[l], 0, set.levels[l], set, infer.score_thr, infer.topk_per_level);
    for (std::size_t i = 0; i < level.size(); ++i) {
      const Box b = clip_box(level.boxes[i], image.shape().w, image.shape().h);
      if (b.valid()) all.add(b, level.scores[i]);
    }
  }
  return nms(all, infer.nms_iou, static_cast<std::size_t>(infer.max_det));
}

std::unique_ptr<Detector> build(const DetectorConfig& cfg) { return std::make_unique<Detector>(cfg); }

}  // namespace eface
