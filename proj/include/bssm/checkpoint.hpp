#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bssm/model.hpp"
#include "bssm/taxonomy.hpp"
#include "bssm/tokenize.hpp"
#include "json.hpp"

namespace bssm {

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

/// Where a training run stands after its last completed epoch.
struct TrainProgress {
  int epoch = 0;  // completed epochs
  long step = 0;  // optimizer steps taken
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int bad_epochs = 0;
  bool finished = false;
  std::string stop_reason;
  /// One object per completed epoch (no wall-clock fields, so checkpoints
  /// stay byte-reproducible).
  nlohmann::json history = nlohmann::json::array();
  /// Serialized std::mt19937_64 used for batch shuffling.
  std::string rng_state;
};

struct Checkpoint {
  std::string stage;
  ModelConfig model;
  nlohmann::json train_config = nlohmann::json::object();
  Vocab vocab;
  std::optional<Taxonomy> taxonomy;
  TrainProgress progress;
  NamedTensors params;   // latest parameters (resume point)
  NamedTensors best;     // parameters of the best validation epoch
  NamedTensors adam_m, adam_v;
};

/// Directory layout: manifest.json, vocab.txt, optional taxonomy.json and
/// tensors/<group>/<index>.bin in the dump format. The directory is written
/// under a temporary name and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

NamedTensors snapshot(const std::vector<NamedParam<float>>& params);
/// Copies tensors into parameters by name; every parameter must be present
/// with a matching shape.
void restore(const NamedTensors& tensors, const std::vector<NamedParam<float>>& params);

/// Rebuilds the model from the best (or latest) tensors.
ModelState<float> model_from_checkpoint(const Checkpoint& ckpt, bool best = true);

}  // namespace bssm
