#include "eface/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "eface/errors.hpp"

namespace eface {

BoxList ImageRecord::valid_boxes() const {
  BoxList out;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (i < attributes.size() && attributes[i].invalid != 0) continue;
    out.add(gt.boxes[i]);
  }
  return out;
}

namespace {

std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    std::string line(text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  while (!lines.empty() && lines.back().find_first_not_of(" \t") == std::string::npos) lines.pop_back();
  return lines;
}

// Parses whitespace-separated numbers; false if any token is not numeric.
bool parse_numbers(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') return false;
    out.push_back(v);
  }
  return !out.empty();
}

bool is_blank(const std::string& s) { return s.find_first_not_of(" \t") == std::string::npos; }

}  // namespace

std::vector<ImageRecord> parse_wider_annotations(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<ImageRecord> records;
  std::vector<double> nums;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (is_blank(lines[i])) {
      ++i;
      continue;
    }
    ImageRecord rec;
    rec.path = lines[i];
    const int path_line = static_cast<int>(i) + 1;
    ++i;
    if (i >= lines.size()) throw ParseError("missing face count after '" + rec.path + "'", path_line + 1);
    if (!parse_numbers(lines[i], nums) || nums.size() != 1 || nums[0] < 0 || nums[0] != std::floor(nums[0])) {
      throw ParseError("expected a face count, got '" + lines[i] + "'", static_cast<int>(i) + 1);
    }
    const int count = static_cast<int>(nums[0]);
    ++i;
    if (count == 0) {
      // WIDER writes a placeholder row of zeros after a zero count.
      if (i < lines.size() && parse_numbers(lines[i], nums) && nums.size() >= 4) ++i;
      records.push_back(std::move(rec));
      continue;
    }
    for (int k = 0; k < count; ++k, ++i) {
      const int lineno = static_cast<int>(i) + 1;
      if (i >= lines.size()) {
        throw ParseError("'" + rec.path + "' declares " + std::to_string(count) + " faces but the file ends after " +
                             std::to_string(k),
                         lineno);
      }
      if (!parse_numbers(lines[i], nums)) {
        throw ParseError("'" + rec.path + "' declares " + std::to_string(count) + " faces but only " +
                             std::to_string(k) + " rows precede '" + lines[i] + "'",
                         lineno);
      }
      if (nums.size() != 4 && nums.size() != 10) {
        throw ParseError("face row needs 4 or 10 fields, got " + std::to_string(nums.size()), lineno);
      }
      const double x = nums[0], y = nums[1], w = nums[2], h = nums[3];
      if (!(w > 0.0) || !(h > 0.0)) {
        rec.flagged = true;
        rec.warnings.push_back("line " + std::to_string(lineno) + ": dropped box with non-positive size " +
                               std::to_string(w) + "x" + std::to_string(h));
        continue;
      }
      FaceAttributes a;
      if (nums.size() == 10) {
        a = FaceAttributes{static_cast<int>(nums[4]), static_cast<int>(nums[5]), static_cast<int>(nums[6]),
                           static_cast<int>(nums[7]), static_cast<int>(nums[8]), static_cast<int>(nums[9])};
      }
      rec.gt.add(Box{x, y, x + w, y + h});
      rec.attributes.push_back(a);
    }
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<ImageRecord> load_wider_annotations(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open annotation file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_wider_annotations(ss.str());
}

std::string format_wider_annotations(std::span<const ImageRecord> records) {
  std::string out;
  char buf[256];
  for (const auto& r : records) {
    out += r.path + "\n" + std::to_string(r.gt.size()) + "\n";
    if (r.gt.empty()) out += "0 0 0 0 0 0 0 0 0 0\n";
    for (std::size_t i = 0; i < r.gt.size(); ++i) {
      const Box& b = r.gt.boxes[i];
      const FaceAttributes a = i < r.attributes.size() ? r.attributes[i] : FaceAttributes{};
      std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %d %d %d %d %d %d\n", b.x1, b.y1, b.width(),
                    b.height(), a.blur, a.expression, a.illumination, a.invalid, a.occlusion, a.pose);
      out += buf;
    }
  }
  return out;
}

void SynthSpec::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("synthetic image size must be positive");
  if (min_faces < 0 || max_faces < min_faces) throw ConfigError("synthetic face count range is invalid");
  if (!(min_scale > 1.0) || max_scale < min_scale) throw ConfigError("synthetic scale range is invalid");
  if (!(min_aspect > 0.0) || max_aspect < min_aspect) throw ConfigError("synthetic aspect range is invalid");
  if (occlusion_fraction < 0.0 || occlusion_fraction > 1.0) throw ConfigError("occlusion fraction must lie in [0,1]");
  if (noise < 0.0 || noise > 0.5) throw ConfigError("noise amplitude must lie in [0,0.5]");
}

namespace {

struct Ellipse {
  double cx, cy, rx, ry;
  bool contains(double x, double y) const {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

void fill_ellipse(Tensor& img, const Ellipse& e, const std::array<double, 3>& rgb) {
  const Shape& s = img.shape();
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y1 = std::min(s.h - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x1 = std::min(s.w - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!e.contains(x + 0.5, y + 0.5)) continue;
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = rgb[static_cast<std::size_t>(c)];
    }
  }
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

SynthScene synth_scene(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SynthScene scene;
  scene.image = Tensor(Shape{1, 3, spec.height, spec.width});
  Tensor& img = scene.image;

  // Background: a tinted linear gradient plus per-pixel noise.
  std::array<double, 3> base{};
  for (auto& b : base) b = 0.25 + 0.35 * unit(rng);
  const double gx = (unit(rng) - 0.5) * 0.3;
  const double gy = (unit(rng) - 0.5) * 0.3;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double ramp = gx * x / spec.width + gy * y / spec.height;
      for (int c = 0; c < 3; ++c) {
        img.at(0, c, y, x) = base[static_cast<std::size_t>(c)] + ramp + spec.noise * (2.0 * unit(rng) - 1.0);
      }
    }
  }

  const int requested =
      spec.min_faces + static_cast<int>(unit(rng) * (spec.max_faces - spec.min_faces + 1 - 1e-12));
  scene.meta.requested_faces = requested;
  const double log_lo = std::log(spec.min_aspect);
  const double log_hi = std::log(spec.max_aspect);
  constexpr int kMaxTries = 200;
  constexpr double kGap = 2.0;
  for (int f = 0; f < requested; ++f) {
    for (int attempt = 0; attempt < kMaxTries; ++attempt) {
      const double scale = spec.min_scale + (spec.max_scale - spec.min_scale) * unit(rng);
      const double aspect = std::exp(log_lo + (log_hi - log_lo) * unit(rng));
      const double w = scale * std::sqrt(aspect);
      const double h = scale / std::sqrt(aspect);
      const double ux = unit(rng);
      const double uy = unit(rng);
      if (w > spec.width || h > spec.height) continue;
      const double x1 = ux * (spec.width - w);
      const double y1 = uy * (spec.height - h);
      const Box b{x1, y1, x1 + w, y1 + h};
      const Box grown{b.x1 - kGap, b.y1 - kGap, b.x2 + kGap, b.y2 + kGap};
      bool clash = false;
      for (const Box& other : scene.gt.boxes) clash = clash || iou(grown, other) > 0.0;
      if (clash) continue;
      scene.gt.add(b);
      break;
    }
  }
  scene.meta.placed_faces = static_cast<int>(scene.gt.size());

  for (const Box& b : scene.gt.boxes) {
    const double tone = 0.75 + 0.2 * unit(rng);
    const std::array<double, 3> skin{tone, tone * 0.78, tone * 0.62};
    fill_ellipse(img, Ellipse{b.cx(), b.cy(), 0.5 * b.width(), 0.5 * b.height()}, skin);
    const std::array<double, 3> dark{0.08, 0.06, 0.05};
    const double ex = 0.18 * b.width();
    const double er = std::max(0.6, 0.07 * std::min(b.width(), b.height()));
    fill_ellipse(img, Ellipse{b.cx() - ex, b.cy() - 0.12 * b.height(), er, er}, dark);
    fill_ellipse(img, Ellipse{b.cx() + ex, b.cy() - 0.12 * b.height(), er, er}, dark);
    fill_ellipse(img, Ellipse{b.cx(), b.cy() + 0.25 * b.height(), 0.2 * b.width(), std::max(0.6, 0.05 * b.height())},
                 std::array<double, 3>{0.55, 0.15, 0.15});
  }

  // Occluders: a rectangular patch over one side of the face, inside its box.
  const int n_occ = static_cast<int>(std::lround(spec.occlusion_fraction * scene.meta.placed_faces));
  scene.meta.occluded.assign(static_cast<std::size_t>(scene.meta.placed_faces), false);
  for (int f = 0; f < n_occ; ++f) {
    scene.meta.occluded[static_cast<std::size_t>(f)] = true;
    const Box& b = scene.gt.boxes[static_cast<std::size_t>(f)];
    const int side = static_cast<int>(unit(rng) * 4.0);
    const double frac = 0.35 + 0.2 * unit(rng);
    Box patch = b;
    if (side == 0) patch.x2 = b.x1 + frac * b.width();
    if (side == 1) patch.x1 = b.x2 - frac * b.width();
    if (side == 2) patch.y2 = b.y1 + frac * b.height();
    if (side == 3) patch.y1 = b.y2 - frac * b.height();
    const std::array<double, 3> col{unit(rng), unit(rng), unit(rng)};
    for (int y = static_cast<int>(std::ceil(patch.y1 - 0.5)); y < patch.y2 - 0.5 && y < spec.height; ++y) {
      for (int x = static_cast<int>(std::ceil(patch.x1 - 0.5)); x < patch.x2 - 0.5 && x < spec.width; ++x) {
        for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = col[static_cast<std::size_t>(c)];
      }
    }
  }

  for (double& v : img.values()) v = quantize(v);
  return scene;
}

std::vector<SynthScene> synth_dataset(int count, const SynthSpec& spec) {
  std::vector<SynthScene> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    SynthSpec s = spec;
    s.seed = spec.seed + static_cast<std::uint64_t>(i);
    out.push_back(synth_scene(s));
  }
  return out;
}

std::vector<ImageRecord> write_synth_dataset(const std::filesystem::path& dir, std::span<const SynthScene> scenes) {
  std::filesystem::create_directories(dir / "images");
  std::vector<ImageRecord> records;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "images/synth_%05zu.png", i);
    save_image(scenes[i].image, dir / name);
    ImageRecord r;
    r.path = name;
    r.gt = scenes[i].gt;
    r.attributes.resize(r.gt.size());
    for (std::size_t f = 0; f < r.gt.size(); ++f) r.attributes[f].occlusion = scenes[i].meta.occluded[f] ? 1 : 0;
    records.push_back(std::move(r));
  }
  std::ofstream out(dir / "annotations.txt");
  out << format_wider_annotations(records);
  if (!out) throw std::runtime_error("cannot write " + (dir / "annotations.txt").string());
  return records;
}

Tensor load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image " + path.string());
  Tensor t(Shape{1, 3, bgr.rows, bgr.cols});
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = row[x][2 - c] / 255.0;
    }
  }
  return t;
}

void save_image(const Tensor& image, const std::filesystem::path& path) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("save_image expects [1,3,H,W], got " + s.str());
  cv::Mat bgr(s.h, s.w, CV_8UC3);
  for (int y = 0; y < s.h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = static_cast<unsigned char>(std::lround(std::clamp(image.at(0, c, y, x), 0.0, 1.0) * 255.0));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("cannot write image " + path.string());
}

Tensor resize_image(const Tensor& image, int height, int width) {
  const Shape& s = image.shape();
  if (s.h == height && s.w == width) return image;
  Tensor out(Shape{s.n, s.c, height, width});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const cv::Mat src(s.h, s.w, CV_64F, const_cast<double*>(image.plane(n, c)));
      cv::Mat dst(height, width, CV_64F, out.plane(n, c));
      cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
    }
  }
  return out;
}

void draw_boxes(Tensor& image, const BoxList& boxes, double r, double g, double b) {
  const Shape& s = image.shape();
  const std::array<double, 3> col{r, g, b};
  auto paint = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= s.w || y >= s.h) return;
    for (int c = 0; c < 3; ++c) image.at(0, c, y, x) = col[static_cast<std::size_t>(c)];
  };
  for (const Box& bx : boxes.boxes) {
    const int x1 = static_cast<int>(std::floor(bx.x1));
    const int y1 = static_cast<int>(std::floor(bx.y1));
    const int x2 = static_cast<int>(std::ceil(bx.x2)) - 1;
    const int y2 = static_cast<int>(std::ceil(bx.y2)) - 1;
    for (int x = x1; x <= x2; ++x) {
      paint(x, y1);
      paint(x, y2);
    }
    for (int y = y1; y <= y2; ++y) {
      paint(x1, y);
      paint(x2, y);
    }
  }
}

Sample prepare_sample(const Tensor& image, const BoxList& boxes, int size) {
  check_input_size(size, size);
  const Shape& s = image.shape();
  const double sx = static_cast<double>(size) / s.w;
  const double sy = static_cast<double>(size) / s.h;
  Sample out;
  out.image = resize_image(image, size, size);
  for (const Box& b : boxes.boxes) {
    const Box scaled{b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
    if (scaled.width() >= 1.0 && scaled.height() >= 1.0) out.gt.add(scaled);
  }
  return out;
}

Sample augment_sample(const Sample& s, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Shape& sh = s.image.shape();
  const double scale = 0.5 + 0.5 * unit(rng);
  const int cw = std::max(1, static_cast<int>(sh.w * scale));
  const int ch = std::max(1, static_cast<int>(sh.h * scale));
  const int ox = static_cast<int>(unit(rng) * (sh.w - cw + 1 - 1e-9));
  const int oy = static_cast<int>(unit(rng) * (sh.h - ch + 1 - 1e-9));
  const bool flip = unit(rng) < 0.5;

  Tensor crop(Shape{1, 3, ch, cw});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < ch; ++y) {
      for (int x = 0; x < cw; ++x) crop.at(0, c, y, x) = s.image.at(0, c, oy + y, ox + x);
    }
  }
  BoxList kept;
  for (const Box& b : s.gt.boxes) {
    if (b.cx() < ox || b.cx() >= ox + cw || b.cy() < oy || b.cy() >= oy + ch) continue;
    const Box shifted = clip_box(Box{b.x1 - ox, b.y1 - oy, b.x2 - ox, b.y2 - oy}, cw, ch);
    if (shifted.valid()) kept.add(shifted);
  }
  Sample out = prepare_sample(crop, kept, sh.w);
  if (sh.w != sh.h) out = prepare_sample(crop, kept, sh.h);
  if (flip) {
    Tensor& img = out.image;
    const Shape& os = img.shape();
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < os.h; ++y) {
        double* row = img.plane(0, c) + static_cast<std::size_t>(y) * os.w;
        std::reverse(row, row + os.w);
      }
    }
    for (Box& b : out.gt.boxes) b = Box{os.w - b.x2, b.y1, os.w - b.x1, b.y2};
  }
  return out;
}

std::filesystem::path detection_file_path(const std::filesystem::path& out_dir, const std::string& image_path) {
  const std::filesystem::path p(image_path);
  return out_dir / p.parent_path() / (p.stem().string() + ".txt");
}

void write_detections(std::span<const ImageRecord> records, std::span<const BoxList> detections,
                      const std::filesystem::path& out_dir) {
  if (records.size() != detections.size()) throw ShapeError("write_detections needs one detection list per record");
  char buf[256];
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto path = detection_file_path(out_dir, records[i].path);
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write detections to " + path.string());
    const BoxList& d = detections[i];
    out << std::filesystem::path(records[i].path).stem().string() << "\n" << d.size() << "\n";
    for (std::size_t k = 0; k < d.size(); ++k) {
      const Box& b = d.boxes[k];
      const double score = d.has_scores() ? d.scores[k] : 1.0;
      std::snprintf(buf, sizeof buf, "%.6f %.6f %.6f %.6f %.6f\n", b.x1, b.y1, b.width(), b.height(), score);
      out << buf;
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }
}

DetectionFile parse_detection_file(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.size() < 2) throw ParseError("detection file needs a name line and a count line", 1);
  DetectionFile f;
  f.name = lines[0];
  std::vector<double> nums;
  if (!parse_numbers(lines[1], nums) || nums.size() != 1 || nums[0] < 0) {
    throw ParseError("expected a detection count", 2);
  }
  const auto count = static_cast<std::size_t>(nums[0]);
  if (lines.size() < 2 + count) throw ParseError("detection file ends early", static_cast<int>(lines.size()) + 1);
  for (std::size_t k = 0; k < count; ++k) {
    if (!parse_numbers(lines[2 + k], nums) || nums.size() != 5) {
      throw ParseError("detection row needs 5 fields", static_cast<int>(k) + 3);
    }
    f.detections.add(Box{nums[0], nums[1], nums[0] + nums[2], nums[1] + nums[3]}, nums[4]);
  }
  return f;
}

std::vector<BoxList> read_detections(std::span<const ImageRecord> records, const std::filesystem::path& out_dir) {
  std::vector<BoxList> out;
  for (const auto& r : records) {
    const auto path = detection_file_path(out_dir, r.path);
    std::ifstream in(path);
    if (!in) {
      out.emplace_back();
      continue;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    out.push_back(parse_detection_file(ss.str()).detections);
  }
  return out;
}

}  // namespace eface
