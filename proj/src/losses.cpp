#include "eface/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eface/errors.hpp"

namespace eface {

void LossConfig::validate() const {
  if (!(alpha_t > 0.0 && alpha_t < 1.0)) throw ConfigError("loss.alpha_t must lie in (0,1)");
  if (!(gamma >= 0.0)) throw ConfigError("loss.gamma must be non-negative");
  if (!std::isfinite(lambda) || lambda < 0.0) throw ConfigError("loss.lambda must be finite and non-negative");
}

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument("focal loss label must be 0 or 1, got " + std::to_string(label));
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

double normalizer(int num_pos) { return static_cast<double>(std::max(num_pos, 1)); }

}  // namespace

double focal_term(double p, int label, const LossConfig& cfg) {
  check_label(label);
  const double pc = clamp_prob(p);
  const double pt = label == 1 ? pc : 1.0 - pc;
  const double alpha = label == 1 ? cfg.alpha_t : 1.0 - cfg.alpha_t;
  return -alpha * std::pow(1.0 - pt, cfg.gamma) * std::log(pt);
}

double focal_term_grad(double p, int label, const LossConfig& cfg) {
  check_label(label);
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  const double pt = label == 1 ? p : 1.0 - p;
  const double alpha = label == 1 ? cfg.alpha_t : 1.0 - cfg.alpha_t;
  const double q = 1.0 - pt;
  // d/dpt of -alpha q^gamma ln(pt)
  const double mod = cfg.gamma == 0.0 ? 0.0 : cfg.gamma * std::pow(q, cfg.gamma - 1.0) * std::log(pt);
  const double dpt = alpha * (mod - std::pow(q, cfg.gamma) / pt);
  return label == 1 ? dpt : -dpt;
}

double focal_loss(std::span<const double> p, std::span<const int> labels, const LossConfig& cfg) {
  if (p.size() != labels.size()) throw ShapeError("focal_loss: probability and label counts differ");
  double sum = 0.0;
  int num_pos = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sum += focal_term(p[i], labels[i], cfg);
    num_pos += labels[i] == 1;
  }
  return sum / normalizer(num_pos);
}

std::vector<double> focal_loss_grad(std::span<const double> p, std::span<const int> labels, const LossConfig& cfg) {
  if (p.size() != labels.size()) throw ShapeError("focal_loss_grad: probability and label counts differ");
  int num_pos = 0;
  for (int y : labels) num_pos += y == 1;
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) g[i] = focal_term_grad(p[i], labels[i], cfg) / normalizer(num_pos);
  return g;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

double smooth_l1_loss(std::span<const Deltas> pred, std::span<const Deltas> target) {
  if (pred.size() != target.size()) throw ShapeError("smooth_l1_loss: prediction and target counts differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (int k = 0; k < 4; ++k) sum += smooth_l1(pred[i][k] - target[i][k]);
  }
  return sum / normalizer(static_cast<int>(pred.size()));
}

LossReport total_loss(double cls, double reg, const LossConfig& cfg, int num_pos) {
  if (!std::isfinite(cls)) throw NonFiniteError("classification head produced a non-finite loss");
  if (!std::isfinite(reg)) throw NonFiniteError("regression head produced a non-finite loss");
  return LossReport{cls, reg, cls + cfg.lambda * reg, num_pos};
}

DetectionTargets collect_targets(std::span<const MatchResult> matches) {
  DetectionTargets t;
  t.batch = static_cast<int>(matches.size());
  if (matches.empty()) return t;
  t.anchors_per_image = matches.front().labels.size();
  for (const auto& m : matches) {
    if (m.labels.size() != t.anchors_per_image) throw ShapeError("match results over different anchor sets");
    t.labels.insert(t.labels.end(), m.labels.begin(), m.labels.end());
    t.deltas.insert(t.deltas.end(), m.targets.begin(), m.targets.end());
    t.num_pos += m.num_pos;
  }
  return t;
}

namespace {

// Visits (level map, sample, cell, flat anchor index) in AnchorSet order.
template <typename Fn>
void for_each_cell(std::span<const Var> levels, const DetectionTargets& t, Fn&& fn) {
  std::size_t per_image = 0;
  for (const auto& v : levels) per_image += v->shape().plane();
  if (per_image != t.anchors_per_image) {
    throw ShapeError("head outputs cover " + std::to_string(per_image) + " cells but targets hold " +
                     std::to_string(t.anchors_per_image) + " anchors");
  }
  for (int n = 0; n < t.batch; ++n) {
    std::size_t offset = static_cast<std::size_t>(n) * t.anchors_per_image;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      const std::size_t cells = levels[l]->shape().plane();
      for (std::size_t i = 0; i < cells; ++i) fn(l, n, i, offset + i);
      offset += cells;
    }
  }
}

}  // namespace

Var focal_loss_from_logits(std::span<const Var> cls_levels, const DetectionTargets& targets, const LossConfig& cfg) {
  const double norm = normalizer(targets.num_pos);
  double sum = 0.0;
  for_each_cell(cls_levels, targets, [&](std::size_t l, int n, std::size_t i, std::size_t a) {
    if (targets.labels[a] == AnchorLabel::ignore) return;
    const double z = cls_levels[l]->value.plane(n, 0)[i];
    sum += focal_term(1.0 / (1.0 + std::exp(-z)), targets.labels[a] == AnchorLabel::positive ? 1 : 0, cfg);
  });
  std::vector<Var> inputs(cls_levels.begin(), cls_levels.end());
  return make_op(Tensor::scalar(sum / norm), std::move(inputs), false, [cfg, norm, labels = targets.labels](Node& self) {
    const double seed = self.grad[0];
    std::vector<Var>& levels = self.inputs;
    DetectionTargets shape_only;
    shape_only.batch = static_cast<int>(levels.front()->shape().n);
    shape_only.anchors_per_image = labels.size() / static_cast<std::size_t>(shape_only.batch);
    for_each_cell(levels, shape_only, [&](std::size_t l, int n, std::size_t i, std::size_t a) {
      if (labels[a] == AnchorLabel::ignore || !levels[l]->requires_grad) return;
      const double z = levels[l]->value.plane(n, 0)[i];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double dp = focal_term_grad(p, labels[a] == AnchorLabel::positive ? 1 : 0, cfg);
      levels[l]->grad_buffer().plane(n, 0)[i] += seed * dp * p * (1.0 - p) / norm;
    });
  });
}

Var smooth_l1_from_maps(std::span<const Var> reg_levels, const DetectionTargets& targets) {
  const double norm = normalizer(targets.num_pos);
  double sum = 0.0;
  for_each_cell(reg_levels, targets, [&](std::size_t l, int n, std::size_t i, std::size_t a) {
    if (targets.labels[a] != AnchorLabel::positive) return;
    for (int k = 0; k < 4; ++k) sum += smooth_l1(reg_levels[l]->value.plane(n, k)[i] - targets.deltas[a][k]);
  });
  std::vector<Var> inputs(reg_levels.begin(), reg_levels.end());
  return make_op(Tensor::scalar(sum / norm), std::move(inputs), false,
                 [norm, labels = targets.labels, deltas = targets.deltas](Node& self) {
                   const double seed = self.grad[0];
                   std::vector<Var>& levels = self.inputs;
                   DetectionTargets shape_only;
                   shape_only.batch = static_cast<int>(levels.front()->shape().n);
                   shape_only.anchors_per_image = labels.size() / static_cast<std::size_t>(shape_only.batch);
                   for_each_cell(levels, shape_only, [&](std::size_t l, int n, std::size_t i, std::size_t a) {
                     if (labels[a] != AnchorLabel::positive || !levels[l]->requires_grad) return;
                     for (int k = 0; k < 4; ++k) {
                       const double x = levels[l]->value.plane(n, k)[i] - deltas[a][k];
                       levels[l]->grad_buffer().plane(n, k)[i] += seed * smooth_l1_grad(x) / norm;
                     }
                   });
                 });
}

}  // namespace eface
