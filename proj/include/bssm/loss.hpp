#pragma once

#include <span>
#include <vector>

#include "bssm/ops.hpp"
#include "bssm/taxonomy.hpp"

namespace bssm {

/// Drops ranks from the first one whose class the taxonomy has not seen, so
/// targets can be built for validation records with novel taxa.
TaxonomicLabel known_prefix(const Taxonomy& taxonomy, const TaxonomicLabel& label);

struct LossStats {
  /// Samples with no unmasked rank among the classified ranks.
  std::size_t all_masked = 0;
};

/// Batch loss over the ranks in `head_ranks` (logits[i] belongs to
/// head_ranks[i], shape batch x classes). Per sample: soft cross-entropy at
/// every unmasked rank, times weights[r][y_r] when `weights` is given, averaged
/// over those ranks; the batch loss is the mean over samples.
template <typename S>
Var<S> weighted_cross_entropy(const std::vector<Var<S>>& logits, const std::vector<int>& head_ranks,
                              std::span<const TargetDistribution* const> targets, const ClassWeights* weights,
                              LossStats* stats = nullptr);

/// Single-sample convenience form.
template <typename S>
Var<S> weighted_cross_entropy(const std::vector<Var<S>>& logits, const std::vector<int>& head_ranks,
                              const TargetDistribution& target, const ClassWeights& weights, bool enabled);

}  // namespace bssm
