#pragma once

// Toy training, evaluation and the supervision / relation-scheme ablation.

#include <span>
#include <string>
#include <vector>

#include "ocrseg/profiler.hpp"
#include "ocrseg/run_config.hpp"

namespace ocrseg {

struct EvalResult {
  double pixel_accuracy = 0.0;
  std::vector<double> class_iou;     // 0 where the class never occurs
  std::vector<bool> class_present;   // union > 0
  double mean_iou = 0.0;             // over present classes
  std::vector<std::vector<std::int64_t>> confusion;  // [truth][pred]
};

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  // Ignore-labelled pixels are skipped; other labels must be in [0, K).
  void add(std::span<const std::int32_t> pred, const LabelMap& truth, std::int32_t ignore_index = kIgnoreLabel);
  std::int64_t total() const { return total_; }
  // Throws DataError when nothing was counted.
  EvalResult result() const;

 private:
  std::size_t k_;
  std::vector<std::vector<std::int64_t>> m_;
  std::int64_t total_ = 0;
};

// Per-pixel argmax over [K x H x W] logits; ties go to the lowest index.
std::vector<std::int32_t> argmax_labels(const Tensor<double>& logits);

struct TrainLogRow {
  std::size_t iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double final_ce = 0.0;
  double aux_ce = 0.0;
};

struct TrainResult {
  SegModel<double> model;
  std::vector<TrainLogRow> log;
};

// The default splits: training scenes from data_seed, evaluation scenes from
// a stream derived from it.
Dataset make_train_set(const RunConfig& cfg);
Dataset make_eval_set(const RunConfig& cfg);

// Features of every scene under the frozen lift.
std::vector<Tensor<double>> lift_dataset(const Dataset& data, const FeatureStem& stem);

// The model as initialised for cfg.seed, before any update.
SegModel<double> init_model(const RunConfig& cfg);

// SGD with momentum under the poly schedule. Throws DivergenceError on a
// non-finite loss.
TrainResult train_model(const RunConfig& cfg, const Dataset& train);

EvalResult evaluate_model(const SegModel<double>& model, const Dataset& data, const RunConfig& cfg);

std::string train_log_csv(const std::vector<TrainLogRow>& log);
std::string eval_json(const EvalResult& r);

// Config plus every named tensor.
std::string checkpoint_json(const RunConfig& cfg, SegModel<double>& model);
struct Checkpoint {
  RunConfig config;
  SegModel<double> model;
};
Checkpoint load_checkpoint(const std::string& json_text);

struct AblationCell {
  bool aux = true;
  RelationScheme scheme = RelationScheme::ocr;
  std::vector<std::uint64_t> seeds;
  std::vector<double> miou;            // per seed, NaN when the run failed
  std::vector<double> pixel_accuracy;
  std::vector<std::string> errors;     // per seed, empty on success
  double mean_miou() const;
};

struct AblationResult {
  std::vector<AblationCell> cells;  // aux on/off x {ocr, da, acf}
  std::vector<Verdict> verdicts;  // majority over seeds, gate the run
  std::vector<Verdict> reported;  // informational only
};

// Cells share the dataset and the seed list cfg.seed .. cfg.seed + ablate_seeds - 1.
AblationResult run_ablation(const RunConfig& cfg, const Dataset& train, const Dataset& eval);
std::string ablation_csv(const AblationResult& r);
// One header row and one value row: w/o supervision, w/ supervision, DA, ACF, ours.
std::string ablation_table_csv(const AblationResult& r);
std::string ablation_json(const AblationResult& r);

}  // namespace ocrseg
