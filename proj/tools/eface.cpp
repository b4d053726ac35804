// eface: train / detect / eval / profile / stats over the detector library.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "eface/config.hpp"
#include "eface/data_io.hpp"
#include "eface/detector.hpp"
#include "eface/errors.hpp"
#include "eface/evaluation.hpp"
#include "eface/training.hpp"

namespace fs = std::filesystem;
using namespace eface;

namespace {

struct ModelFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string neck;
  std::optional<int> attn_depth;
  bool no_rfe = false;
  bool no_attn = false;
  std::string backbone;
  std::vector<std::string> overrides;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "key=value settings file")->check(CLI::ExistingFile);
    cmd.add_option("--seed", seed, "random seed");
    cmd.add_option("--neck", neck, "sbifpn, fpn_panet or bifpn");
    cmd.add_option("--attn-depth", attn_depth, "stacked attention units per level");
    cmd.add_flag("--no-rfe", no_rfe, "disable receptive field enhancement");
    cmd.add_flag("--no-attn", no_attn, "disable attention");
    cmd.add_option("--backbone", backbone, "backbone tag: tiny, b0..b5");
    cmd.add_option("--set", overrides, "extra key=value override (repeatable)");
  }

  // File settings first, then flags.
  KeyValueConfig merged() const {
    KeyValueConfig kv;
    if (!config.empty()) kv = KeyValueConfig::load(config);
    for (const auto& o : overrides) kv.merge(KeyValueConfig::parse(o));
    if (seed) kv.set("seed", std::to_string(*seed));
    if (!neck.empty()) kv.set("neck", neck);
    if (attn_depth) kv.set("attn_depth", std::to_string(*attn_depth));
    if (no_rfe) kv.set("rfe", "false");
    if (no_attn) kv.set("attn", "false");
    if (!backbone.empty()) {
      kv.set("backbone.tag", backbone);
      kv.erase("backbone.widths");
      kv.erase("backbone.depths");
    }
    return kv;
  }
};

// Settings consumed by commands that only read data.
struct DataFlags {
  std::string config;
  std::vector<std::string> overrides;

  void attach(CLI::App& cmd) {
    cmd.add_option("--config", config, "key=value settings file (data.* keys)")->check(CLI::ExistingFile);
    cmd.add_option("--set", overrides, "extra key=value override (repeatable)");
  }

  KeyValueConfig merged() const {
    KeyValueConfig kv;
    if (!config.empty()) kv = KeyValueConfig::load(config);
    for (const auto& o : overrides) kv.merge(KeyValueConfig::parse(o));
    return kv;
  }
};

struct Dataset {
  std::vector<ImageRecord> records;
  std::function<Tensor(std::size_t)> image;
};

std::optional<int> synth_count(const std::string& spec) {
  if (spec.rfind("synth", 0) != 0 || spec.size() == 5) return std::nullopt;
  const std::string digits = spec.substr(5);
  if (digits.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
  return std::stoi(digits);
}

SynthSpec synth_spec_from(const KeyValueConfig& kv, int size) {
  SynthSpec s;
  s.height = s.width = size;
  s.seed = static_cast<std::uint64_t>(kv.get_int("data.seed", 0));
  s.min_faces = kv.get_int("data.min_faces", s.min_faces);
  s.max_faces = kv.get_int("data.max_faces", s.max_faces);
  s.min_scale = kv.get_double("data.min_scale", s.min_scale);
  s.max_scale = kv.get_double("data.max_scale", s.max_scale);
  s.min_aspect = kv.get_double("data.min_aspect", s.min_aspect);
  s.max_aspect = kv.get_double("data.max_aspect", s.max_aspect);
  s.occlusion_fraction = kv.get_double("data.occlusion", s.occlusion_fraction);
  return s;
}

Dataset load_dataset(const std::string& spec, const KeyValueConfig& kv, int size) {
  Dataset ds;
  if (const auto n = synth_count(spec)) {
    auto scenes = std::make_shared<std::vector<SynthScene>>(synth_dataset(*n, synth_spec_from(kv, size)));
    for (std::size_t i = 0; i < scenes->size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof name, "images/synth_%05zu.png", i);
      ImageRecord r;
      r.path = name;
      r.gt = (*scenes)[i].gt;
      r.attributes.resize(r.gt.size());
      ds.records.push_back(std::move(r));
    }
    ds.image = [scenes](std::size_t i) { return (*scenes)[i].image; };
    return ds;
  }
  fs::path ann = spec;
  if (fs::is_directory(ann)) ann /= "annotations.txt";
  const fs::path root = kv.contains("data.image_root") ? fs::path(kv.get_string("data.image_root", ""))
                                                        : ann.parent_path();
  ds.records = load_wider_annotations(ann);
  for (const auto& r : ds.records) {
    for (const auto& w : r.warnings) std::cerr << "warning: " << r.path << ": " << w << "\n";
  }
  ds.image = [root, recs = ds.records](std::size_t i) { return load_image(root / recs[i].path); };
  return ds;
}

void echo_config(const KeyValueConfig& kv, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.txt", std::ios::trunc);
  out << kv.text();
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.txt").string());
}

int run_train(const ModelFlags& mf, const std::string& dataset, const std::string& out_dir,
              std::optional<int> epochs_flag) {
  KeyValueConfig kv = mf.merged();
  const DetectorConfig cfg = detector_config_from(kv);
  const TrainSchedule schedule = train_schedule_from(kv);
  const int size = kv.get_int("data.input_size", 128);
  const int epochs = epochs_flag ? *epochs_flag : kv.get_int("train.epochs", 10);
  const bool augment = kv.get_bool("data.augment", false);
  const std::string data_spec = dataset.empty() ? kv.get_string("data.dataset", "synth20") : dataset;

  KeyValueConfig effective = to_key_values(cfg);
  write_train_schedule(schedule, effective);
  for (const auto& [k, v] : kv.values()) {
    if (!effective.contains(k)) effective.set(k, v);
  }
  effective.set("data.input_size", std::to_string(size));
  effective.set("data.dataset", data_spec);
  effective.set("train.epochs", std::to_string(epochs));
  echo_config(effective, out_dir);

  const Dataset ds = load_dataset(data_spec, kv, size);
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    samples.push_back(prepare_sample(ds.image(i), ds.records[i].valid_boxes(), size));
  }
  auto model = build(cfg);
  Trainer trainer(*model, schedule);
  FitOptions opts;
  opts.epochs = epochs;
  opts.seed = cfg.seed;
  opts.out_dir = out_dir;
  if (augment) opts.transform = augment_sample;
  opts.on_epoch = [](const EpochMetrics& m) {
    std::printf("epoch %d cls %.6f reg %.6f total %.6f lr %.3g\n", m.epoch, m.cls_loss, m.reg_loss, m.total, m.lr);
    std::fflush(stdout);
  };
  fit(trainer, samples, opts);
  save_checkpoint(*model, fs::path(out_dir) / "model.ckpt", effective);
  std::printf("checkpoint %s\n", (fs::path(out_dir) / "model.ckpt").c_str());
  return 0;
}

int run_detect(const std::string& checkpoint, const std::string& dataset, const std::string& out_dir,
               std::optional<int> input, std::optional<double> score_thr, bool draw) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  auto model = load_detector(checkpoint);
  const int size = input ? *input : ckpt.config.get_int("data.input_size", 128);
  InferConfig infer = model->config().infer;
  if (score_thr) infer.score_thr = *score_thr;

  const Dataset ds = load_dataset(dataset, ckpt.config, size);
  std::vector<BoxList> all;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const Tensor original = ds.image(i);
    const Shape& s = original.shape();
    const Tensor resized = resize_image(original, size, size);
    BoxList d = model->detect(resized, infer);
    const double sx = static_cast<double>(s.w) / size;
    const double sy = static_cast<double>(s.h) / size;
    for (Box& b : d.boxes) b = Box{b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy};
    if (draw) {
      Tensor canvas = original;
      draw_boxes(canvas, d);
      save_image(canvas, fs::path(out_dir) / "annotated" / fs::path(ds.records[i].path).filename());
    }
    all.push_back(std::move(d));
  }
  write_detections(ds.records, all, fs::path(out_dir) / "detections");
  std::size_t total = 0;
  for (const auto& d : all) total += d.size();
  std::printf("%zu images, %zu detections written to %s\n", all.size(), total,
              (fs::path(out_dir) / "detections").c_str());
  return 0;
}

int run_eval(const KeyValueConfig& kv, const std::string& dataset, const std::string& detections, const std::string& out_dir, double iou_thr,
             const std::vector<std::string>& subsets, int size) {
  const Dataset ds = load_dataset(dataset, kv, size);
  const auto dets = read_detections(ds.records, detections);
  std::vector<BoxList> gts;
  for (const auto& r : ds.records) gts.push_back(r.valid_boxes());

  std::vector<PRCurve> curves;
  std::vector<std::string> labels;
  auto evaluate = [&](const std::string& label, const std::vector<std::size_t>& idx) {
    std::vector<BoxList> d, g;
    for (auto i : idx) {
      d.push_back(dets[i]);
      g.push_back(gts[i]);
    }
    curves.push_back(average_precision(d, g, iou_thr));
    labels.push_back(label);
    const auto& c = curves.back();
    if (c.num_gt == 0) std::fprintf(stderr, "note: subset '%s' has no ground truth\n", label.c_str());
    std::printf("%-12s AP@%.2f %.6f  (gt %zu, dets %zu, tp %zu)\n", label.c_str(), iou_thr, c.ap, c.num_gt,
                c.num_dets, c.true_positives);
  };
  if (subsets.empty()) {
    std::vector<std::size_t> all(ds.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    evaluate("all", all);
  }
  for (const auto& file : subsets) {
    const auto names = load_name_list(file);
    evaluate(fs::path(file).stem().string(), select_subset(ds.records, names));
  }
  if (!out_dir.empty()) {
    for (std::size_t k = 0; k < curves.size(); ++k) write_pr_csv(curves[k], fs::path(out_dir) / ("pr_" + labels[k] + ".csv"));
    write_pr_svg(curves, labels, fs::path(out_dir) / "pr.svg");
  }
  return 0;
}

int run_profile(const ModelFlags& mf, const std::string& checkpoint, int input, const std::string& out_dir) {
  std::unique_ptr<Detector> model;
  if (!checkpoint.empty()) {
    model = load_detector(checkpoint);
  } else {
    model = build(detector_config_from(mf.merged()));
  }
  const ComplexityReport report = profile(*model, input);
  std::fputs(format_complexity_table(report).c_str(), stdout);
  std::printf("total_params %lld\ntotal_macs %lld\n", static_cast<long long>(report.total_params),
              static_cast<long long>(report.total_macs));
  if (!out_dir.empty()) {
    echo_config(to_key_values(model->config()), out_dir);
    write_complexity_csv(report, fs::path(out_dir) / "complexity.csv");
  }
  return 0;
}

int run_stats(const KeyValueConfig& kv, const std::string& dataset, const std::string& out_dir, int size) {
  const Dataset ds = load_dataset(dataset, kv, size);
  const auto edges = default_aspect_bins();
  const Histogram h = aspect_ratio_histogram(ds.records, edges);
  std::size_t faces = 0;
  for (const auto& r : ds.records) faces += r.gt.size();
  std::printf("%zu images, %zu faces\n", ds.records.size(), faces);
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    std::printf("[%6.3f, %6.3f%c %zu\n", h.edges[i], h.edges[i + 1], i + 1 == h.counts.size() ? ']' : ')', h.counts[i]);
  }
  std::printf("below %zu above %zu\n", h.below, h.above);
  if (!out_dir.empty()) {
    write_histogram_csv(h, fs::path(out_dir) / "aspect_ratio.csv");
    write_histogram_svg(h, fs::path(out_dir) / "aspect_ratio.svg");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"eface: single-stage face detector"};
  app.require_subcommand(1);

  ModelFlags train_flags, profile_flags;
  DataFlags eval_flags, stats_flags;
  std::string dataset, out_dir, checkpoint, detections;
  std::optional<int> epochs, input;
  std::optional<double> score_thr;
  bool draw = false;
  double iou_thr = 0.5;
  int size = 128;
  int profile_input = 256;
  std::vector<std::string> subsets;

  auto* train = app.add_subcommand("train", "fit a detector and write checkpoints plus metrics.csv");
  train_flags.attach(*train);
  train->add_option("--dataset", dataset, "annotation file/directory or synthN");
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--epochs", epochs, "epochs (default train.epochs or 10)");

  auto* detect = app.add_subcommand("detect", "run a checkpoint over a dataset");
  detect->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  detect->add_option("--dataset", dataset, "annotation file/directory or synthN")->required();
  detect->add_option("--out", out_dir, "output directory")->required();
  detect->add_option("--input", input, "network input size (multiple of 128)");
  detect->add_option("--score-thr", score_thr, "score threshold");
  detect->add_flag("--draw", draw, "also write images with boxes drawn");

  auto* eval = app.add_subcommand("eval", "average precision of detection files against annotations");
  eval_flags.attach(*eval);
  eval->add_option("--dataset", dataset, "annotation file/directory or synthN")->required();
  eval->add_option("--detections", detections, "directory of detection files")->required();
  eval->add_option("--out", out_dir, "directory for PR CSV and plot");
  eval->add_option("--iou", iou_thr, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  eval->add_option("--subset", subsets, "image list file restricting GT (repeatable)");
  eval->add_option("--input", size, "synthetic image size");

  auto* prof = app.add_subcommand("profile", "parameter and MAC counts per layer");
  profile_flags.attach(*prof);
  prof->add_option("--checkpoint", checkpoint, "profile a saved model instead");
  prof->add_option("--input", profile_input, "square input size");
  prof->add_option("--out", out_dir, "directory for complexity.csv");

  auto* stats = app.add_subcommand("stats", "face aspect-ratio histogram");
  stats_flags.attach(*stats);
  stats->add_option("--dataset", dataset, "annotation file/directory or synthN")->required();
  stats->add_option("--out", out_dir, "directory for CSV and plot");
  stats->add_option("--input", size, "synthetic image size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (train->parsed()) return run_train(train_flags, dataset, out_dir, epochs);
    if (detect->parsed()) return run_detect(checkpoint, dataset, out_dir, input, score_thr, draw);
    if (eval->parsed()) return run_eval(eval_flags.merged(), dataset, detections, out_dir, iou_thr, subsets, size);
    if (prof->parsed()) return run_profile(profile_flags, checkpoint, profile_input, out_dir);
    if (stats->parsed()) return run_stats(stats_flags.merged(), dataset, out_dir, size);
  } catch (const ParseError& e) {
    std::cerr << "error: line " << e.line() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
