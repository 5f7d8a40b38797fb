#include "bssm/loss.hpp"

#include "bssm/error.hpp"

namespace bssm {

TaxonomicLabel known_prefix(const Taxonomy& taxonomy, const TaxonomicLabel& label) {
  TaxonomicLabel out;
  for (int r = 0; r < kNumRanks; ++r) {
    if (!taxonomy.class_of(label, r)) break;
    out[r] = label[r];
  }
  return out;
}

template <typename S>
Var<S> weighted_cross_entropy(const std::vector<Var<S>>& logits, const std::vector<int>& head_ranks,
                              std::span<const TargetDistribution* const> targets, const ClassWeights* weights,
                              LossStats* stats) {
  if (logits.size() != head_ranks.size()) throw ShapeError("weighted_cross_entropy: one logit matrix per rank");
  const auto batch = static_cast<Index>(targets.size());
  if (batch == 0) throw ContractError("weighted_cross_entropy: empty batch");

  std::vector<int> active(targets.size(), 0);
  for (std::size_t b = 0; b < targets.size(); ++b) {
    for (int r : head_ranks) active[b] += targets[b]->mask[r] ? 1 : 0;
    if (active[b] == 0 && stats) ++stats->all_masked;
  }

  Var<S> total;
  for (std::size_t i = 0; i < head_ranks.size(); ++i) {
    const int r = head_ranks[i];
    const Index k = logits[i].value().cols();
    if (logits[i].value().rows() != batch) throw ShapeError("weighted_cross_entropy: logits rows != batch");
    Tensor<S> coef(Shape{batch, k});
    bool any = false;
    for (Index b = 0; b < batch; ++b) {
      const TargetDistribution& t = *targets[static_cast<std::size_t>(b)];
      if (!t.mask[r]) continue;
      if (t.per_rank[r].size() != k)
        throw ShapeError("weighted_cross_entropy: target at rank " + std::string(kRankNames[r]) + " has " +
                         std::to_string(t.per_rank[r].size()) + " classes, logits have " + std::to_string(k));
      double factor = 1.0 / (active[static_cast<std::size_t>(b)] * static_cast<double>(batch));
      if (weights) factor *= weights->per_rank[r](t.true_class[r]);
      coef.matrix().row(b) = (t.per_rank[r] * factor).template cast<S>().transpose();
      any = true;
    }
    if (!any) continue;
    Var<S> term = soft_cross_entropy(logits[i], coef);
    total = total.defined() ? add(total, term) : term;
  }
  if (!total.defined()) {
    // Nothing to learn from; keep the graph connected so callers can still
    // run backward.
    total = scale(sum(logits.front()), S(0));
  }
  return total;
}

template <typename S>
Var<S> weighted_cross_entropy(const std::vector<Var<S>>& logits, const std::vector<int>& head_ranks,
                              const TargetDistribution& target, const ClassWeights& weights, bool enabled) {
  const TargetDistribution* one[] = {&target};
  return weighted_cross_entropy<S>(logits, head_ranks, std::span<const TargetDistribution* const>(one),
                                   enabled ? &weights : nullptr);
}

#define BSSM_INSTANTIATE_LOSS(S)                                                                              \
  template Var<S> weighted_cross_entropy<S>(const std::vector<Var<S>>&, const std::vector<int>&,              \
                                            std::span<const TargetDistribution* const>, const ClassWeights*, \
                                            LossStats*);                                                      \
  template Var<S> weighted_cross_entropy<S>(const std::vector<Var<S>>&, const std::vector<int>&,              \
                                            const TargetDistribution&, const ClassWeights&, bool);

BSSM_INSTANTIATE_LOSS(float)
BSSM_INSTANTIATE_LOSS(double)

}  // namespace bssm
