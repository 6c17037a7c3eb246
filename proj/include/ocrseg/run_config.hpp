#pragma once

// Flat key=value run configuration shared by every CLI subcommand.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ocrseg/model.hpp"
#include "ocrseg/synthetic.hpp"

namespace ocrseg {

struct RunConfig {
  std::uint64_t seed = 1;       // model init and sample order
  std::uint64_t data_seed = 1;  // scene generation
  std::uint64_t lift_seed = 1234;
  std::size_t grid = 32;
  std::size_t classes = 4;
  std::size_t train_scenes = 64;
  std::size_t eval_scenes = 16;
  std::size_t iterations = 500;
  std::size_t batch = 4;
  double base_lr = 0.05;
  double poly_power = 0.9;
  PolyForm poly_form = PolyForm::conventional;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double final_weight = 1.0;
  double aux_weight = 0.4;
  bool aux = true;
  ModuleKind module = ModuleKind::ocr;
  RelationScheme relation_scheme = RelationScheme::ocr;
  std::size_t key_channels = 16;
  std::size_t mid_channels = 32;
  std::size_t stem_channels = 16;
  std::size_t feat_channels = 16;
  AttentionScale attention_scale = AttentionScale::unit;
  std::size_t da_regions = 0;
  std::size_t shapes_min = 1;
  std::size_t shapes_max = 3;
  std::size_t classes_per_scene = 1;
  double radius_min = 4.0;
  double radius_max = 9.0;
  double background = 100.0;
  double class_spread = 30.0;
  double noise = 50.0;
  double illumination = 0.0;
  double gain = 0.0;
  std::size_t ablate_seeds = 3;
  std::string data_dir = "data";
  std::string out_dir = "out";

  // Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  // "key=value"; throws ConfigError when there is no '='.
  void apply_override(const std::string& assignment);
  // One assignment per line; blank lines and lines starting with '#' are skipped.
  void apply_text(const std::string& text);
  void load_file(const std::filesystem::path& path);

  void validate() const;
  // Every key in a fixed order, one "key=value" per line.
  std::string to_text() const;
  static const std::vector<std::string>& keys();

  // module=ocr takes its relation scheme from relation_scheme.
  ModuleKind effective_module() const;
  SceneConfig scene_config() const;
  ModelConfig model_config() const;
  LossConfig loss_config() const;
  PolySchedule schedule() const;
};

}  // namespace ocrseg
