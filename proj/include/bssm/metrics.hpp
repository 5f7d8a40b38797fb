#pragma once

#include <array>
#include <string>
#include <vector>

#include "bssm/taxonomy.hpp"
#include "json.hpp"

namespace bssm {

struct RankMetrics {
  double micro_accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  std::size_t support = 0;
  std::size_t excluded_unseen = 0;
};

struct MetricsReport {
  std::array<RankMetrics, kNumRanks> ranks;
  double ms_per_sample = 0.0;

  nlohmann::json to_json() const;
  /// rank, accuracy, precision, recall, support, excluded_unseen.
  std::string to_tsv() const;
};

/// Scores per-rank predicted class indices (indices into the training
/// taxonomy; -1 means no prediction) against test labels. At each rank,
/// unlabelled records are skipped and records whose true class the training
/// taxonomy lacks are counted as excluded_unseen. Macro means run over the
/// classes present in that rank's remaining ground truth; a class never
/// predicted has precision 0.
MetricsReport evaluate(const std::array<std::vector<int>, kNumRanks>& predictions,
                       const std::vector<TaxonomicLabel>& labels, const Taxonomy& train_taxonomy);

}  // namespace bssm
