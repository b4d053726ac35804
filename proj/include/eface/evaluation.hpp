#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eface/boxes.hpp"
#include "eface/data_io.hpp"
#include "eface/detector.hpp"

namespace eface {

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;  // detection score at which this point is reached
};

struct PRCurve {
  std::vector<PRPoint> points;  // one per detection, in descending score order
  double ap = 0.0;
  std::size_t num_gt = 0;
  std::size_t num_dets = 0;
  std::size_t true_positives = 0;

  // Running max of precision from the right.
  std::vector<double> envelope() const;
};

// Detections are ranked globally by score. Each one is assigned to its
// highest-IoU GT in the same image; it counts as a true positive when that
// IoU reaches iou_thr and the GT is still unclaimed. AP integrates the
// precision envelope over every recall step. With no GT at all AP is 1 when
// there are no detections either and 0 otherwise.
PRCurve average_precision(std::span<const BoxList> dets, std::span<const BoxList> gts, double iou_thr = 0.5);

// Indices of records whose path or file stem appears in names.
std::vector<std::size_t> select_subset(std::span<const ImageRecord> records, std::span<const std::string> names);
std::vector<std::string> load_name_list(const std::filesystem::path& file);

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;  // bin i is [edges[i], edges[i+1]), the last bin is closed
  std::size_t below = 0;
  std::size_t above = 0;
};

// w/h over every GT box.
Histogram aspect_ratio_histogram(std::span<const ImageRecord> records, std::span<const double> bin_edges);
// Geometric bins from 1/4 to 4, four per octave.
std::vector<double> default_aspect_bins();

struct ComplexityEntry {
  std::string name;
  std::string kind;    // conv, norm, fusion, or uncounted
  std::string module;  // backbone, neck, enhance, head, other
  std::int64_t params = 0;
  std::int64_t macs = 0;
  int calls = 0;
};

struct ComplexityReport {
  int input_size = 0;
  std::vector<ComplexityEntry> entries;  // first-call order
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;

  std::map<std::string, std::int64_t> params_by_module() const;
  std::map<std::string, std::int64_t> macs_by_module() const;
  std::vector<std::string> uncounted() const;
};

std::string module_of(const std::string& layer_name);

// Records every layer run by `run`. A layer called several times (a shared
// head) contributes its parameters once and its MACs per call. Parameters of
// `store` that no recorded layer owns are listed as "uncounted" entries.
ComplexityReport profile_run(const ParamStore& store, const std::function<void()>& run);
// One inference pass on a zero image of input_size x input_size.
ComplexityReport profile(const Detector& model, int input_size);

std::string format_complexity_table(const ComplexityReport& r);
void write_complexity_csv(const ComplexityReport& r, const std::filesystem::path& path);

void write_pr_csv(const PRCurve& c, const std::filesystem::path& path);
void write_pr_svg(std::span<const PRCurve> curves, std::span<const std::string> labels, const std::filesystem::path& path);
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);
void write_histogram_svg(const Histogram& h, const std::filesystem::path& path);

}  // namespace eface
