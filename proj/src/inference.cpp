#include "bssm/inference.hpp"

#include "bssm/error.hpp"
#include "bssm/ops.hpp"

namespace bssm {

RankPredictions predict_ranks(const ModelState<float>& model, const Taxonomy& taxonomy,
                              const std::vector<TokenSequence>& data, int batch_size, LiftMode lift) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::vector<int> ranks = model.head_ranks();
  if (ranks.empty()) throw ContractError("predict: model has no classification heads");
  for (int r : ranks)
    if (model.config.num_classes[r] != taxonomy.num_classes(r))
      throw CompatibilityError("predict: head for " + std::string(kRankNames[r]) + " has " +
                               std::to_string(model.config.num_classes[r]) + " classes, taxonomy has " +
                               std::to_string(taxonomy.num_classes(r)));

  RankPredictions out;
  NoGradGuard guard;
  std::vector<const TokenSequence*> ptrs;
  for (std::size_t s = 0; s < data.size(); s += static_cast<std::size_t>(batch_size)) {
    ptrs.clear();
    for (std::size_t i = s; i < std::min(data.size(), s + static_cast<std::size_t>(batch_size)); ++i)
      ptrs.push_back(&data[i]);
    const auto batch = make_batch<float>(std::span<const TokenSequence* const>(ptrs));
    const auto logits = classify(model, model_forward(model, batch), batch);

    std::array<Eigen::MatrixXd, kNumRanks> probs;
    if (model.config.head_mode == HeadMode::MultiHead) {
      for (std::size_t i = 0; i < ranks.size(); ++i)
        probs[ranks[i]] = softmax(logits[i]).value().matrix().cast<double>();
    } else {
      const Eigen::MatrixXd species = softmax(logits.front()).value().matrix().cast<double>();
      for (int r = 0; r < kNumRanks; ++r) probs[r].resize(species.rows(), taxonomy.num_classes(r));
      for (Index b = 0; b < species.rows(); ++b) {
        const auto lifted = lift_species_probs(taxonomy, species.row(b).transpose(), lift);
        for (int r = 0; r < kNumRanks; ++r) probs[r].row(b) = lifted[r].transpose();
      }
    }
    for (int r = 0; r < kNumRanks; ++r) {
      for (std::size_t b = 0; b < ptrs.size(); ++b) {
        if (probs[r].cols() == 0) {
          out.classes[r].push_back(-1);
          out.confidence[r].push_back(0.0);
          continue;
        }
        Index arg = 0;
        const double p = probs[r].row(static_cast<Index>(b)).maxCoeff(&arg);
        out.classes[r].push_back(static_cast<int>(arg));
        out.confidence[r].push_back(p);
      }
    }
  }
  return out;
}

}  // namespace bssm
