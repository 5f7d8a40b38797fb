#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "bssm/checkpoint.hpp"
#include "bssm/loss.hpp"

namespace bssm {

enum class Stage { Pretrain, Finetune, Scratch };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  double lr = 8e-4;
  int max_epochs = 15;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int patience = 3;
  int batch_size = 32;
  std::uint64_t seed = 0;
  SmoothingMode smoothing_mode = SmoothingMode::Hierarchical;
  double epsilon = 0.1;
  bool weighted_loss = true;
  HeadMode head_mode = HeadMode::MultiHead;
  /// Seconds; unset means no limit.
  std::optional<double> wall_clock_limit;
  /// Optimizer steps; 0 means no limit.
  long max_steps = 0;

  /// Stage-specific learning rate and epoch budget.
  static TrainConfig defaults(Stage stage);
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LabelledData {
  std::vector<TokenSequence> tokens;
  std::vector<TaxonomicLabel> labels;
};

struct TrainHooks {
  /// Line-delimited JSON metrics (`epoch`, `split`, `loss`, `lr`, `wall_ms`).
  std::ostream* metrics_log = nullptr;
  /// When set, the checkpoint is rewritten here after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Called after each completed epoch; returning true halts training as if
  /// the process had been interrupted (progress.finished stays false).
  std::function<bool(int epoch)> interrupt_after_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  /// Parameters of the best validation epoch.
  ModelState<float> model;
  std::size_t all_masked_samples = 0;
};

/// Next-token training. An empty validation set falls back to the training
/// sequences for early stopping.
TrainResult pretrain(const std::vector<TokenSequence>& train, const std::vector<TokenSequence>& val,
                     const Vocab& vocab, const ModelConfig& model, const TrainConfig& cfg,
                     const TrainHooks& hooks = {}, const Checkpoint* resume = nullptr);

/// Supervised training of fresh heads on a backbone from `pretrained`
/// (Finetune) or a random one (Scratch). `model.num_classes` and
/// `model.head_mode` are taken from the taxonomy and `cfg`.
TrainResult finetune(const LabelledData& train, const LabelledData& val, const Vocab& vocab,
                     const Taxonomy& taxonomy, const ModelConfig& model, const TrainConfig& cfg,
                     const Checkpoint* pretrained = nullptr, const TrainHooks& hooks = {},
                     const Checkpoint* resume = nullptr);

/// Builds the model a finetune run starts from (step 0), for inspection.
ModelState<float> finetune_initial_model(const Vocab& vocab, const Taxonomy& taxonomy, const ModelConfig& model,
                                         const TrainConfig& cfg, const Checkpoint* pretrained);

/// Mean next-token loss over a dataset (no gradient).
double evaluate_lm_loss(const ModelState<float>& model, const std::vector<TokenSequence>& data, int batch_size);

}  // namespace bssm
