#include "eface/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "eface/errors.hpp"
#include "eface/pyramid_features.hpp"

namespace eface {

namespace {
const double kMaxLogSize = std::log(1000.0 / 16.0);
}

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 > x1 && y2 > y1;
}

void BoxList::validate() const {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!boxes[i].valid()) throw ShapeError("box " + std::to_string(i) + " is degenerate");
  }
  if (!scores.empty() && scores.size() != boxes.size()) throw ShapeError("score count does not match box count");
  if (!labels.empty() && labels.size() != boxes.size()) throw ShapeError("label count does not match box count");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ShapeError("non-finite detection score");
  }
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

IouMatrix iou_matrix(const BoxList& a, const BoxList& b) {
  a.validate();
  b.validate();
  IouMatrix m{a.size(), b.size(), std::vector<double>(a.size() * b.size())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) m.values[i * b.size() + j] = iou(a.boxes[i], b.boxes[j]);
  }
  return m;
}

void AnchorConfig::validate() const {
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(sizes[i] > 0.0)) throw ConfigError("anchor sizes must be positive");
    if (i > 0 && !(sizes[i] > sizes[i - 1])) throw ConfigError("anchor sizes must increase with level");
  }
  if (!(t_neg <= t_pos) || t_pos <= 0.0 || t_pos > 1.0 || t_neg < 0.0) {
    throw ConfigError("anchor thresholds need 0 <= t_neg <= t_pos <= 1");
  }
}

AnchorSet generate_anchors(int height, int width, const AnchorConfig& cfg) {
  check_input_size(height, width);
  cfg.validate();
  AnchorSet set;
  for (int level = kMinLevel; level <= kMaxLevel; ++level) {
    AnchorLevel info;
    info.level = level;
    info.stride = level_stride(level);
    info.grid_h = height / info.stride;
    info.grid_w = width / info.stride;
    info.size = cfg.sizes[static_cast<std::size_t>(level - kMinLevel)];
    info.offset = set.anchors.size();
    const double half = 0.5 * info.size;
    for (int y = 0; y < info.grid_h; ++y) {
      for (int x = 0; x < info.grid_w; ++x) {
        const double cx = (x + 0.5) * info.stride;
        const double cy = (y + 0.5) * info.stride;
        set.anchors.add(Box{cx - half, cy - half, cx + half, cy + half});
      }
    }
    set.levels.push_back(info);
  }
  return set;
}

Deltas encode_box(const Box& anchor, const Box& gt) {
  if (!(gt.width() > 0.0) || !(gt.height() > 0.0)) throw ShapeError("cannot encode a box with non-positive size");
  if (!(anchor.width() > 0.0) || !(anchor.height() > 0.0)) throw ShapeError("anchor with non-positive size");
  return Deltas{(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
                std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

Box decode_box(const Box& anchor, const Deltas& d) {
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogSize));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogSize));
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box clip_box(const Box& b, double width, double height) {
  return Box{std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
             std::clamp(b.y2, 0.0, height)};
}

MatchResult match_anchors(const AnchorSet& anchors, const BoxList& gt, double t_pos, double t_neg) {
  if (!(t_neg <= t_pos)) throw ConfigError("match_anchors requires t_neg <= t_pos");
  gt.validate();
  const std::size_t n = anchors.size();
  MatchResult r;
  r.labels.assign(n, AnchorLabel::negative);
  r.gt_index.assign(n, -1);
  r.targets.assign(n, Deltas{0, 0, 0, 0});
  r.max_iou.assign(n, 0.0);
  if (gt.empty()) return r;

  const IouMatrix m = iou_matrix(anchors.anchors, gt);
  std::vector<int> argmax(n, -1);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      if (argmax[a] < 0 || m(a, g) > r.max_iou[a]) {
        r.max_iou[a] = m(a, g);
        argmax[a] = static_cast<int>(g);
      }
    }
    if (r.max_iou[a] >= t_pos) {
      r.labels[a] = AnchorLabel::positive;
      r.gt_index[a] = argmax[a];
    } else if (r.max_iou[a] >= t_neg) {
      r.labels[a] = AnchorLabel::ignore;
    }
  }

  std::vector<bool> covered(gt.size(), false);
  for (std::size_t a = 0; a < n; ++a) {
    if (r.labels[a] == AnchorLabel::positive) covered[static_cast<std::size_t>(r.gt_index[a])] = true;
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (covered[g]) continue;
    std::size_t best = n;
    for (std::size_t a = 0; a < n; ++a) {
      if (r.labels[a] == AnchorLabel::positive) continue;
      if (best == n || m(a, g) > m(best, g)) best = a;
    }
    if (best == n || m(best, g) <= 0.0) continue;
    r.labels[best] = AnchorLabel::positive;
    r.gt_index[best] = static_cast<int>(g);
  }

  for (std::size_t a = 0; a < n; ++a) {
    if (r.labels[a] != AnchorLabel::positive) continue;
    ++r.num_pos;
    r.targets[a] = encode_box(anchors.anchors.boxes[a], gt.boxes[static_cast<std::size_t>(r.gt_index[a])]);
  }
  return r;
}

std::vector<std::size_t> nms_indices(const BoxList& dets, double iou_thr, std::size_t max_out) {
  if (dets.scores.size() != dets.boxes.size()) throw ShapeError("nms requires one score per box");
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets.scores[a] > dets.scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t i = 0; i < order.size() && keep.size() < max_out; ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(dets.boxes[cur], dets.boxes[other]) > iou_thr) suppressed[other] = true;
    }
  }
  return keep;
}

BoxList nms(const BoxList& dets, double iou_thr, std::size_t max_out) {
  BoxList out;
  for (std::size_t i : nms_indices(dets, iou_thr, max_out)) {
    out.boxes.push_back(dets.boxes[i]);
    out.scores.push_back(dets.scores[i]);
    if (!dets.labels.empty()) out.labels.push_back(dets.labels[i]);
  }
  return out;
}

}  // namespace eface
