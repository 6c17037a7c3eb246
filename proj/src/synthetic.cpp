#include "ocrseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ocrseg {

bool PlacedShape::covers(std::size_t y, std::size_t x) const {
  const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
  const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
  switch (kind) {
    case ShapeKind::rect:
      return std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
    case ShapeKind::ellipse:
      return dy * dy + dx * dx <= 1.0;
    case ShapeKind::diamond:
      return std::abs(dy) + std::abs(dx) <= 1.0;
  }
  return false;
}

void SceneConfig::validate() const {
  if (height < 1 || width < 1) throw ConfigError("scene: grid must be at least 1x1");
  if (num_classes < 2 || num_classes > 254) throw ConfigError("scene: classes must be in [2, 254]");
  if (min_shapes > max_shapes) throw ConfigError("scene: min_shapes > max_shapes");
  if (!(min_radius > 0.0) || min_radius > max_radius) throw ConfigError("scene: need 0 < min_radius <= max_radius");
  if (background < 0.0 || background > 255.0 || class_spread < 0.0 || noise < 0.0 || illumination < 0.0 || gain < 0.0 || gain >= 1.0) throw ConfigError("scene: bad rendering ranges");
}

std::array<double, 3> class_color(std::size_t cls, double spread, double background) {
  if (cls == 0) return {background, background, background};
  std::array<double, 3> dir{0.0, 0.0, 0.0};
  if (cls <= 3) {
    dir[cls - 1] = 1.0;
  } else {
    // further classes: deterministic unit directions
    const std::uint64_t h = cls * 0x9E3779B97F4A7C15ULL;
    double n = 0.0;
    for (int c = 0; c < 3; ++c) {
      dir[static_cast<std::size_t>(c)] = static_cast<double>((h >> (16 * c)) % 1000) / 500.0 - 1.0;
      n += dir[static_cast<std::size_t>(c)] * dir[static_cast<std::size_t>(c)];
    }
    n = std::sqrt(n > 0.0 ? n : 1.0);
    for (auto& d : dir) d /= n;
  }
  return {160.0 + spread * dir[0], 150.0 + spread * dir[1], 140.0 + spread * dir[2]};
}

LabelMap rasterize(const std::vector<PlacedShape>& shapes, std::size_t height, std::size_t width) {
  LabelMap m{height, width, std::vector<std::int32_t>(height * width, 0)};
  for (const auto& s : shapes)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x)
        if (s.covers(y, x)) m.labels[y * width + x] = s.cls;
  return m;
}

SyntheticScene generate_scene(const SceneConfig& cfg, Rng& rng) {
  cfg.validate();
  SyntheticScene scene;
  const auto n_shapes = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_shapes), static_cast<std::int64_t>(cfg.max_shapes)));
  const ShapeKind kinds[] = {ShapeKind::rect, ShapeKind::ellipse, ShapeKind::diamond};
  const auto shape_classes = static_cast<std::int64_t>(cfg.num_classes) - 1;
  std::vector<std::int32_t> allowed;
  if (cfg.classes_per_scene == 0 || cfg.classes_per_scene >= static_cast<std::size_t>(shape_classes)) {
    for (std::int64_t c = 1; c <= shape_classes; ++c) allowed.push_back(static_cast<std::int32_t>(c));
  } else {
    while (allowed.size() < cfg.classes_per_scene) {
      const auto c = static_cast<std::int32_t>(rng.uniform_int(1, shape_classes));
      if (std::find(allowed.begin(), allowed.end(), c) == allowed.end()) allowed.push_back(c);
    }
  }
  for (std::size_t i = 0; i < n_shapes; ++i) {
    PlacedShape s;
    s.cls = allowed[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(allowed.size()) - 1))];
    s.kind = kinds[static_cast<std::size_t>(s.cls - 1) % 3];
    s.cy = rng.uniform(0.0, static_cast<double>(cfg.height));
    s.cx = rng.uniform(0.0, static_cast<double>(cfg.width));
    s.ry = rng.uniform(cfg.min_radius, cfg.max_radius);
    s.rx = rng.uniform(cfg.min_radius, cfg.max_radius);
    scene.shapes.push_back(s);
  }
  scene.labels = rasterize(scene.shapes, cfg.height, cfg.width);

  double shift[3], gain[3];
  for (int c = 0; c < 3; ++c) shift[c] = rng.uniform(-cfg.illumination, cfg.illumination);
  for (int c = 0; c < 3; ++c) gain[c] = 1.0 + rng.uniform(-cfg.gain, cfg.gain);

  Image8& img = scene.image;
  img.width = cfg.width;
  img.height = cfg.height;
  img.channels = 3;
  img.pixels.resize(cfg.width * cfg.height * 3);
  for (std::size_t i = 0; i < cfg.width * cfg.height; ++i) {
    const auto base = class_color(static_cast<std::size_t>(scene.labels.labels[i]), cfg.class_spread, cfg.background);
    for (int c = 0; c < 3; ++c) {
      const double v = base[static_cast<std::size_t>(c)] * gain[c] + shift[c] + cfg.noise * rng.normal();
      img.pixels[i * 3 + static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return scene;
}

Dataset generate_dataset(const SceneConfig& cfg, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < count; ++i) {
    SyntheticScene s = generate_scene(cfg, rng);
    d.images.push_back(std::move(s.image));
    d.labels.push_back(std::move(s.labels));
  }
  return d;
}

namespace {

std::string stem_name(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return split + buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::string& split, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / (split + ".txt"), std::ios::binary);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string base = stem_name(split, i);
    write_ppm(dir / (base + ".ppm"), data.images[i]);
    const LabelMap& l = data.labels[i];
    Image8 gray{l.width, l.height, 1, {}};
    for (auto v : l.labels) gray.pixels.push_back(static_cast<std::uint8_t>(v));
    write_pgm(dir / (base + ".pgm"), gray);
    manifest << base << ".ppm " << base << ".pgm\n";
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir.string());
}

Dataset read_dataset(const std::filesystem::path& dir, const std::string& split) {
  std::ifstream manifest(dir / (split + ".txt"));
  if (!manifest) throw IoError("no manifest " + (dir / (split + ".txt")).string());
  Dataset d;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string img_name, lbl_name;
    if (!(ls >> img_name >> lbl_name)) throw DataError("bad manifest line: '" + line + "'");
    Image8 img = read_netpbm(dir / img_name);
    Image8 lbl = read_netpbm(dir / lbl_name);
    if (img.channels != 3 || lbl.channels != 1) throw DataError("manifest pair " + line + " is not PPM + PGM");
    if (img.width != lbl.width || img.height != lbl.height) throw DataError("image/label size mismatch in " + line);
    LabelMap m{lbl.height, lbl.width, {}};
    for (auto v : lbl.pixels) m.labels.push_back(static_cast<std::int32_t>(v));
    d.images.push_back(std::move(img));
    d.labels.push_back(std::move(m));
  }
  return d;
}

FeatureStem::FeatureStem(std::size_t feat_channels, std::uint64_t seed) : feat_(feat_channels) {
  if (feat_channels < 1) throw ConfigError("feature stem needs at least one channel");
  Rng rng(seed);
  weight_.resize(feat_ * 3);
  bias_.resize(feat_);
  for (auto& w : weight_) w = rng.normal() / std::sqrt(3.0);
  for (auto& b : bias_) b = 0.1 * rng.normal();
}

Tensor<double> FeatureStem::lift(const Image8& img) const {
  if (img.channels != 3) throw DataError("feature stem expects RGB input");
  const std::size_t H = img.height, W = img.width, N = H * W;
  Tensor<double> out(Shape{feat_ + 2, H, W});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < N; ++i) {
    double rgb[3];
    for (int c = 0; c < 3; ++c) rgb[c] = img.pixels[i * 3 + static_cast<std::size_t>(c)] / 127.5 - 1.0;
    for (std::size_t f = 0; f < feat_; ++f) {
      o[f * N + i] = bias_[f] + weight_[f * 3] * rgb[0] + weight_[f * 3 + 1] * rgb[1] + weight_[f * 3 + 2] * rgb[2];
    }
    const std::size_t y = i / W, x = i % W;
    o[feat_ * N + i] = H > 1 ? 2.0 * static_cast<double>(y) / static_cast<double>(H - 1) - 1.0 : 0.0;
    o[(feat_ + 1) * N + i] = W > 1 ? 2.0 * static_cast<double>(x) / static_cast<double>(W - 1) - 1.0 : 0.0;
  }
  return out;
}

}  // namespace ocrseg
