#pragma once

// Toy segmentation scenes: class-coded shapes pasted over a background,
// rendered with per-pixel noise (optionally also a per-scene illumination
// change), then lifted to feature maps by a frozen random linear stem.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocrseg/netpbm.hpp"
#include "ocrseg/rng.hpp"
#include "ocrseg/supervision.hpp"

namespace ocrseg {

enum class ShapeKind { rect, ellipse, diamond };

struct PlacedShape {
  std::int32_t cls = 1;
  ShapeKind kind = ShapeKind::rect;
  double cy = 0.0, cx = 0.0;  // centre, pixel units
  double ry = 1.0, rx = 1.0;  // half extents

  // Pixel (y, x) is covered when its centre (y + 0.5, x + 0.5) lies inside.
  bool covers(std::size_t y, std::size_t x) const;
};

struct SceneConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 4;  // class 0 is background
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  // Distinct shape classes drawn per scene; 0 allows all of them.
  std::size_t classes_per_scene = 1;
  double min_radius = 4.0;
  double max_radius = 9.0;
  double background = 100.0;
  double class_spread = 30.0;
  double noise = 50.0;        // per-pixel Gaussian sigma, gray levels
  double illumination = 0.0; // per-scene additive shift range, gray levels
  double gain = 0.0;          // per-scene multiplicative gain range

  void validate() const;
};

struct SyntheticScene {
  Image8 image;  // P6 payload
  LabelMap labels;
  std::vector<PlacedShape> shapes;
};

// Base colour of a class before illumination. The background is uniform
// gray; shape classes sit `spread` levels from a shared light centre along
// distinct directions, so they separate from the background more easily
// than from each other.
std::array<double, 3> class_color(std::size_t cls, double spread, double background);

// Labels from shapes painted in order; later shapes occlude earlier ones.
LabelMap rasterize(const std::vector<PlacedShape>& shapes, std::size_t height, std::size_t width);

SyntheticScene generate_scene(const SceneConfig& cfg, Rng& rng);

struct Dataset {
  std::vector<Image8> images;
  std::vector<LabelMap> labels;

  std::size_t size() const { return images.size(); }
};

// `count` scenes from one seeded stream.
Dataset generate_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed);

// Writes <dir>/<split>_NNNN.ppm / .pgm and appends "<image> <label>" lines
// to <dir>/<split>.txt. Throws IoError on unwritable paths.
void write_dataset(const std::filesystem::path& dir, const std::string& split, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir, const std::string& split);

// Frozen lift of 8-bit RGB to [feat + 2] channels: a seeded random linear
// map of the normalised colour plus two coordinate channels in [-1, 1].
class FeatureStem {
 public:
  FeatureStem(std::size_t feat_channels, std::uint64_t seed);

  std::size_t out_channels() const { return feat_ + 2; }
  Tensor<double> lift(const Image8& img) const;

 private:
  std::size_t feat_;
  std::vector<double> weight_;  // [feat x 3]
  std::vector<double> bias_;    // [feat]
};

}  // namespace ocrseg
