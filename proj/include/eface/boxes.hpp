#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace eface {

// Corner form, pixel units.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct BoxList {
  std::vector<Box> boxes;
  std::vector<double> scores;  // empty or one per box
  std::vector<int> labels;     // empty or one per box

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  bool has_scores() const { return !scores.empty(); }
  void add(const Box& b) { boxes.push_back(b); }
  void add(const Box& b, double score) {
    boxes.push_back(b);
    scores.push_back(score);
  }
  // Throws ShapeError on degenerate boxes or mismatched side arrays.
  void validate() const;
};

double iou(const Box& a, const Box& b);

// Row-major N x M.
struct IouMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

IouMatrix iou_matrix(const BoxList& a, const BoxList& b);

struct AnchorConfig {
  // Square anchor side per level 2..7.
  std::array<double, 6> sizes{16, 32, 64, 128, 256, 512};
  double t_pos = 0.5;
  double t_neg = 0.4;

  void validate() const;
};

struct AnchorLevel {
  int level = 0;
  int stride = 0;
  int grid_h = 0;
  int grid_w = 0;
  double size = 0.0;
  std::size_t offset = 0;  // index of the level's first anchor in AnchorSet::anchors

  std::size_t count() const { return static_cast<std::size_t>(grid_h) * grid_w; }
};

// Anchors ordered by level, then row, then column, matching the flattened
// layout of the per-level head outputs.
struct AnchorSet {
  std::vector<AnchorLevel> levels;
  BoxList anchors;

  std::size_t size() const { return anchors.size(); }
};

AnchorSet generate_anchors(int height, int width, const AnchorConfig& cfg);

using Deltas = std::array<double, 4>;  // dx, dy, dw, dh

Deltas encode_box(const Box& anchor, const Box& gt);
// Exact inverse of encode_box. Log-size deltas are capped at ln(1000/16) so
// exp() cannot overflow on untrained outputs.
Box decode_box(const Box& anchor, const Deltas& d);
Box clip_box(const Box& b, double width, double height);

enum class AnchorLabel : std::int8_t { ignore = -1, negative = 0, positive = 1 };

struct MatchResult {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_index;     // -1 unless positive
  std::vector<Deltas> targets;   // meaningful for positives only
  std::vector<double> max_iou;   // best IoU over GT per anchor (0 with no GT)
  int num_pos = 0;
};

// Threshold matching with an ignore band, followed by compensation: a GT left
// without positives claims its highest-IoU anchor among those not already
// positive.
MatchResult match_anchors(const AnchorSet& anchors, const BoxList& gt, double t_pos, double t_neg);

// Greedy suppression in descending score order (ties: lower index first).
// Returns kept indices into dets.
std::vector<std::size_t> nms_indices(const BoxList& dets, double iou_thr, std::size_t max_out);
BoxList nms(const BoxList& dets, double iou_thr, std::size_t max_out);

}  // namespace eface
