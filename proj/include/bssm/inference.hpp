#pragma once

#include <array>
#include <vector>

#include "bssm/model.hpp"
#include "bssm/taxonomy.hpp"

namespace bssm {

/// Per-rank predicted class index (-1 when the rank has no classes) and the
/// probability assigned to it.
struct RankPredictions {
  std::array<std::vector<int>, kNumRanks> classes;
  std::array<std::vector<double>, kNumRanks> confidence;
};

/// MultiHead models read every head directly. SingleHead models predict
/// species and derive the other ranks with `lift`.
RankPredictions predict_ranks(const ModelState<float>& model, const Taxonomy& taxonomy,
                              const std::vector<TokenSequence>& data, int batch_size,
                              LiftMode lift = LiftMode::ProbabilitySum);

}  // namespace bssm
