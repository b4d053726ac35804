#pragma once

#include <span>
#include <vector>

#include "eface/autograd.hpp"
#include "eface/boxes.hpp"

namespace eface {

struct LossConfig {
  double lambda = 1.0;
  double alpha_t = 0.25;
  double gamma = 2.0;

  void validate() const;
};

struct LossReport {
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double total = 0.0;
  int num_pos = 0;
};

inline constexpr double kProbClamp = 1e-7;

// Per-anchor focal term -alpha' (1 - p_t)^gamma ln(p_t) on a clamped p.
double focal_term(double p, int label, const LossConfig& cfg);
// Derivative of focal_term with respect to p (zero where the clamp is active).
double focal_term_grad(double p, int label, const LossConfig& cfg);

// Sum of focal terms divided by max(#positives, 1). Labels must be 0 or 1;
// ignored anchors are dropped by the caller.
double focal_loss(std::span<const double> p, std::span<const int> labels, const LossConfig& cfg);
std::vector<double> focal_loss_grad(std::span<const double> p, std::span<const int> labels, const LossConfig& cfg);

double smooth_l1(double x);
double smooth_l1_grad(double x);

// Elementwise smooth-L1 over the four deltas of each positive, summed and
// divided by max(#positives, 1).
double smooth_l1_loss(std::span<const Deltas> pred, std::span<const Deltas> target);

// total = cls + lambda * reg. Throws NonFiniteError naming the offending head.
LossReport total_loss(double cls, double reg, const LossConfig& cfg, int num_pos = 0);

// Matched targets for a batch, anchors flattened per image in AnchorSet order.
struct DetectionTargets {
  int batch = 0;
  std::size_t anchors_per_image = 0;
  std::vector<AnchorLabel> labels;  // batch * anchors_per_image
  std::vector<Deltas> deltas;       // batch * anchors_per_image
  int num_pos = 0;
};

DetectionTargets collect_targets(std::span<const MatchResult> matches);

// Graph versions over per-level head maps ([N,1,H,W] logits, [N,4,H,W] deltas).
Var focal_loss_from_logits(std::span<const Var> cls_levels, const DetectionTargets& targets, const LossConfig& cfg);
Var smooth_l1_from_maps(std::span<const Var> reg_levels, const DetectionTargets& targets);

}  // namespace eface
