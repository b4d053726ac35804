#include "eface/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "eface/errors.hpp"

namespace eface {

std::vector<double> PRCurve::envelope() const {
  std::vector<double> env(points.size());
  double run = 0.0;
  for (std::size_t k = points.size(); k-- > 0;) {
    run = std::max(run, points[k].precision);
    env[k] = run;
  }
  return env;
}

PRCurve average_precision(std::span<const BoxList> dets, std::span<const BoxList> gts, double iou_thr) {
  if (dets.size() != gts.size()) throw ShapeError("average_precision needs one detection list per image");
  struct Ranked {
    double score;
    std::size_t image;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  PRCurve curve;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    curve.num_gt += gts[i].size();
    for (std::size_t k = 0; k < dets[i].size(); ++k) {
      ranked.push_back({dets[i].has_scores() ? dets[i].scores[k] : 1.0, i, k});
    }
  }
  curve.num_dets = ranked.size();
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  if (curve.num_gt == 0) {
    curve.ap = ranked.empty() ? 1.0 : 0.0;
    for (std::size_t k = 0; k < ranked.size(); ++k) curve.points.push_back({0.0, 0.0, ranked[k].score});
    return curve;
  }

  std::vector<std::vector<bool>> claimed(gts.size());
  for (std::size_t i = 0; i < gts.size(); ++i) claimed[i].assign(gts[i].size(), false);
  std::size_t tp = 0;
  double prev_recall = 0.0;
  std::vector<double> recall_steps;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const auto& r = ranked[k];
    const Box& d = dets[r.image].boxes[r.index];
    double best = 0.0;
    std::size_t best_j = 0;
    bool any = false;
    for (std::size_t j = 0; j < gts[r.image].size(); ++j) {
      const double v = iou(d, gts[r.image].boxes[j]);
      if (!any || v > best) {
        best = v;
        best_j = j;
        any = true;
      }
    }
    if (any && best >= iou_thr && !claimed[r.image][best_j]) {
      claimed[r.image][best_j] = true;
      ++tp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(curve.num_gt);
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    curve.points.push_back({recall, precision, r.score});
  }
  curve.true_positives = tp;
  const auto env = curve.envelope();
  double ap = 0.0;
  for (std::size_t k = 0; k < curve.points.size(); ++k) {
    ap += (curve.points[k].recall - prev_recall) * env[k];
    prev_recall = curve.points[k].recall;
  }
  curve.ap = ap;
  return curve;
}

std::vector<std::size_t> select_subset(std::span<const ImageRecord> records, std::span<const std::string> names) {
  std::vector<std::string> sorted(names.begin(), names.end());
  std::sort(sorted.begin(), sorted.end());
  auto listed = [&](const std::string& s) { return std::binary_search(sorted.begin(), sorted.end(), s); };
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::string& p = records[i].path;
    if (listed(p) || listed(std::filesystem::path(p).stem().string())) out.push_back(i);
  }
  return out;
}

std::vector<std::string> load_name_list(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open subset list " + file.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

Histogram aspect_ratio_histogram(std::span<const ImageRecord> records, std::span<const double> bin_edges) {
  if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end())) {
    throw ConfigError("histogram needs at least two ascending bin edges");
  }
  Histogram h;
  h.edges.assign(bin_edges.begin(), bin_edges.end());
  h.counts.assign(h.edges.size() - 1, 0);
  for (const auto& r : records) {
    for (const Box& b : r.gt.boxes) {
      const double ratio = b.width() / b.height();
      if (ratio < h.edges.front()) {
        ++h.below;
      } else if (ratio > h.edges.back()) {
        ++h.above;
      } else if (ratio == h.edges.back()) {
        ++h.counts.back();
      } else {
        const auto it = std::upper_bound(h.edges.begin(), h.edges.end(), ratio);
        ++h.counts[static_cast<std::size_t>(it - h.edges.begin()) - 1];
      }
    }
  }
  return h;
}

std::vector<double> default_aspect_bins() {
  std::vector<double> edges;
  for (int k = -8; k <= 8; ++k) edges.push_back(std::pow(2.0, k / 4.0));
  return edges;
}

std::map<std::string, std::int64_t> ComplexityReport::params_by_module() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& e : entries) out[e.module] += e.params;
  return out;
}

std::map<std::string, std::int64_t> ComplexityReport::macs_by_module() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& e : entries) out[e.module] += e.macs;
  return out;
}

std::vector<std::string> ComplexityReport::uncounted() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.kind == "uncounted") out.push_back(e.name);
  }
  return out;
}

std::string module_of(const std::string& layer_name) {
  const std::string head = layer_name.substr(0, layer_name.find('.'));
  if (head == "backbone" || head == "extend") return "backbone";
  if (head == "lateral" || head == "neck") return "neck";
  if (head == "rfe" || head == "attn") return "enhance";
  if (head == "head") return "head";
  return "other";
}

namespace {

class Collector final : public OpRecorder {
 public:
  void record(const OpRecord& rec) override {
    const std::string name(rec.name);
    auto it = index_.find(name);
    if (it == index_.end()) {
      index_.emplace(name, entries.size());
      entries.push_back(ComplexityEntry{name, std::string(rec.kind), module_of(name), rec.params, rec.macs, 1});
      return;
    }
    ComplexityEntry& e = entries[it->second];
    e.macs += rec.macs;
    ++e.calls;
  }

  std::vector<ComplexityEntry> entries;

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace

ComplexityReport profile_run(const ParamStore& store, const std::function<void()>& run) {
  Collector collector;
  {
    NoGradGuard no_grad;
    RecorderScope scope(collector);
    run();
  }
  ComplexityReport report;
  report.entries = std::move(collector.entries);

  std::vector<std::string> owners;
  for (const auto& e : report.entries) owners.push_back(e.name + ".");
  for (const auto& p : store.all()) {
    const bool owned = std::any_of(owners.begin(), owners.end(),
                                   [&](const std::string& o) { return p->name.rfind(o, 0) == 0; });
    if (owned) continue;
    report.entries.push_back(
        ComplexityEntry{p->name, "uncounted", module_of(p->name), static_cast<std::int64_t>(p->value.size()), 0, 0});
  }
  for (const auto& e : report.entries) {
    report.total_params += e.params;
    report.total_macs += e.macs;
  }
  return report;
}

ComplexityReport profile(const Detector& model, int input_size) {
  check_input_size(input_size, input_size);
  const Tensor image(Shape{1, 3, input_size, input_size});
  auto report = profile_run(model.params(), [&] { (void)model.forward(image); });
  report.input_size = input_size;
  return report;
}

std::string format_complexity_table(const ComplexityReport& r) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-36s %-9s %-9s %12s %16s\n", "layer", "kind", "module", "params", "MACs");
  out << buf;
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%-36s %-9s %-9s %12lld %16lld\n", e.name.c_str(), e.kind.c_str(),
                  e.module.c_str(), static_cast<long long>(e.params), static_cast<long long>(e.macs));
    out << buf;
  }
  out << "\n";
  const auto params = r.params_by_module();
  const auto macs = r.macs_by_module();
  for (const auto& [module, count] : params) {
    std::snprintf(buf, sizeof buf, "%-9s params %10.4fM  MACs %10.4fG\n", module.c_str(), count / 1e6,
                  macs.at(module) / 1e9);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "total     params %10.4fM  MACs %10.4fG  (input %dx%d)\n", r.total_params / 1e6,
                r.total_macs / 1e9, r.input_size, r.input_size);
  out << buf;
  const auto missing = r.uncounted();
  if (!missing.empty()) out << "uncounted parameters: " << missing.size() << "\n";
  return out.str();
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_complexity_csv(const ComplexityReport& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "layer,kind,module,params,macs,calls\n";
  for (const auto& e : r.entries) {
    out << e.name << ',' << e.kind << ',' << e.module << ',' << e.params << ',' << e.macs << ',' << e.calls << '\n';
  }
  out << "total,,," << r.total_params << ',' << r.total_macs << ",\n";
}

void write_pr_csv(const PRCurve& c, const std::filesystem::path& path) {
  auto out = open_out(path);
  const auto env = c.envelope();
  out << "recall,precision,envelope,score\n";
  char buf[160];
  for (std::size_t k = 0; k < c.points.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", c.points[k].recall, c.points[k].precision, env[k],
                  c.points[k].score);
    out << buf;
  }
}

void write_pr_svg(std::span<const PRCurve> curves, std::span<const std::string> labels,
                  const std::filesystem::path& path) {
  auto out = open_out(path);
  constexpr double W = 480, H = 400, L = 60, T = 20, PW = 380, PH = 320;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  out << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << PW << "\" height=\"" << PH
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; t += 2) {
    const double v = t / 10.0;
    out << "<text x=\"" << L + v * PW << "\" y=\"" << T + PH + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << v
        << "</text>\n";
    out << "<text x=\"" << L - 6 << "\" y=\"" << T + PH - v * PH + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
        << "</text>\n";
  }
  out << "<text x=\"" << L + PW / 2 << "\" y=\"" << H - 6 << "\" font-size=\"12\" text-anchor=\"middle\">Recall</text>\n";
  out << "<text x=\"14\" y=\"" << T + PH / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14 " << T + PH / 2
      << ")\" text-anchor=\"middle\">Precision</text>\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto env = curves[i].envelope();
    const char* color = kPalette[i % std::size(kPalette)];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    double prev_r = 0.0;
    for (std::size_t k = 0; k < env.size(); ++k) {
      const double r = curves[i].points[k].recall;
      out << L + prev_r * PW << ',' << T + PH - env[k] * PH << ' ' << L + r * PW << ',' << T + PH - env[k] * PH << ' ';
      prev_r = r;
    }
    out << "\"/>\n";
    char legend[256];
    std::snprintf(legend, sizeof legend, "%s (AP %.3f)", i < labels.size() ? labels[i].c_str() : "detector",
                  curves[i].ap);
    out << "<text x=\"" << L + 10 << "\" y=\"" << T + PH - 12 - 16.0 * static_cast<double>(i)
        << "\" font-size=\"12\" fill=\"" << color << "\">" << legend << "</text>\n";
  }
  out << "</svg>\n";
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "lo,hi,count\n";
  char buf[128];
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%zu\n", h.edges[i], h.edges[i + 1], h.counts[i]);
    out << buf;
  }
  out << "below," << h.edges.front() << ',' << h.below << '\n';
  out << "above," << h.edges.back() << ',' << h.above << '\n';
}

void write_histogram_svg(const Histogram& h, const std::filesystem::path& path) {
  auto out = open_out(path);
  constexpr double W = 520, H = 360, L = 50, T = 20, PW = 440, PH = 280;
  const std::size_t peak = std::max<std::size_t>(1, *std::max_element(h.counts.begin(), h.counts.end()));
  const double bw = PW / static_cast<double>(h.counts.size());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double bh = PH * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
    out << "<rect x=\"" << L + bw * static_cast<double>(i) + 1 << "\" y=\"" << T + PH - bh << "\" width=\"" << bw - 2
        << "\" height=\"" << bh << "\" fill=\"#1f77b4\"/>\n";
    char label[32];
    std::snprintf(label, sizeof label, "%.2g", h.edges[i]);
    out << "<text x=\"" << L + bw * static_cast<double>(i) << "\" y=\"" << T + PH + 14
        << "\" font-size=\"9\" text-anchor=\"middle\">" << label << "</text>\n";
  }
  out << "<line x1=\"" << L << "\" y1=\"" << T + PH << "\" x2=\"" << L + PW << "\" y2=\"" << T + PH
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << L + PW / 2 << "\" y=\"" << H - 8
      << "\" font-size=\"12\" text-anchor=\"middle\">aspect ratio (w/h)</text>\n";
  out << "<text x=\"" << L << "\" y=\"" << T - 4 << "\" font-size=\"11\">max count " << peak << "</text>\n";
  out << "</svg>\n";
}

}  // namespace eface
