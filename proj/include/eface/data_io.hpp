#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eface/boxes.hpp"
#include "eface/tensor.hpp"
#include "eface/training.hpp"

namespace eface {

struct FaceAttributes {
  int blur = 0;
  int expression = 0;
  int illumination = 0;
  int invalid = 0;
  int occlusion = 0;
  int pose = 0;
};

struct ImageRecord {
  std::string path;
  BoxList gt;
  std::vector<FaceAttributes> attributes;  // one per box in gt
  std::vector<std::string> warnings;
  bool flagged = false;  // some annotation rows were dropped

  // GT minus invalid-flagged faces: what matching and evaluation see.
  BoxList valid_boxes() const;
};

// WIDER bbx_gt text: per image a path line, a face count line, then count
// rows "x y w h blur expression illumination invalid occlusion pose".
std::vector<ImageRecord> parse_wider_annotations(std::string_view text);
std::vector<ImageRecord> load_wider_annotations(const std::filesystem::path& file);
std::string format_wider_annotations(std::span<const ImageRecord> records);

struct SynthSpec {
  int height = 128;
  int width = 128;
  int min_faces = 1;
  int max_faces = 4;
  double min_scale = 16.0;  // sqrt(w*h) of a face box, pixels
  double max_scale = 48.0;
  double min_aspect = 1.0 / 3.0;  // w/h
  double max_aspect = 3.0;
  double occlusion_fraction = 0.0;
  double noise = 0.12;  // background noise amplitude
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthMeta {
  int requested_faces = 0;
  int placed_faces = 0;
  std::vector<bool> occluded;  // one per placed face
};

struct SynthScene {
  Tensor image;  // [1,3,H,W], values on the 1/255 grid
  BoxList gt;
  SynthMeta meta;
};

// Elliptical textured faces on a noisy background. A pure function of spec.
SynthScene synth_scene(const SynthSpec& spec);
// count scenes with seeds spec.seed, spec.seed + 1, ...
std::vector<SynthScene> synth_dataset(int count, const SynthSpec& spec);

// Persists images as PNG under dir/images plus dir/annotations.txt.
std::vector<ImageRecord> write_synth_dataset(const std::filesystem::path& dir, std::span<const SynthScene> scenes);

// [1,3,H,W] RGB in [0,1].
Tensor load_image(const std::filesystem::path& path);
void save_image(const Tensor& image, const std::filesystem::path& path);
Tensor resize_image(const Tensor& image, int height, int width);
void draw_boxes(Tensor& image, const BoxList& boxes, double r = 1.0, double g = 0.1, double b = 0.1);

// Resizes an annotated image to size x size, scaling its boxes.
Sample prepare_sample(const Tensor& image, const BoxList& boxes, int size);
// Random crop (keeping at least half of each side) resized to the input
// size, then a horizontal flip with probability 1/2. Boxes whose centre
// leaves the crop are dropped.
Sample augment_sample(const Sample& s, std::uint64_t seed);

// Detection output, one file per image: name line, count line, then
// "x y w h score" rows.
std::filesystem::path detection_file_path(const std::filesystem::path& out_dir, const std::string& image_path);
void write_detections(std::span<const ImageRecord> records, std::span<const BoxList> detections,
                      const std::filesystem::path& out_dir);

struct DetectionFile {
  std::string name;
  BoxList detections;
};

DetectionFile parse_detection_file(std::string_view text);
// Missing files read as empty detection lists.
std::vector<BoxList> read_detections(std::span<const ImageRecord> records, const std::filesystem::path& out_dir);

}  // namespace eface
