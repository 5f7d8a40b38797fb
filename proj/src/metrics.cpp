#include "bssm/metrics.hpp"

#include <map>
#include <sstream>

#include "bssm/error.hpp"

namespace bssm {

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json per_rank = nlohmann::json::object();
  for (int r = 0; r < kNumRanks; ++r) {
    const RankMetrics& m = ranks[r];
    per_rank[std::string(kRankNames[r])] = {{"micro_accuracy", m.micro_accuracy},
                                            {"macro_precision", m.macro_precision},
                                            {"macro_recall", m.macro_recall},
                                            {"support", m.support},
                                            {"excluded_unseen", m.excluded_unseen}};
  }
  j["ranks"] = per_rank;
  j["ms_per_sample"] = ms_per_sample;
  return j;
}

std::string MetricsReport::to_tsv() const {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "rank\taccuracy\tprecision\trecall\tsupport\texcluded_unseen\n";
  for (int r = 0; r < kNumRanks; ++r) {
    const RankMetrics& m = ranks[r];
    out << kRankNames[r] << '\t' << m.micro_accuracy << '\t' << m.macro_precision << '\t' << m.macro_recall << '\t'
        << m.support << '\t' << m.excluded_unseen << '\n';
  }
  return out.str();
}

MetricsReport evaluate(const std::array<std::vector<int>, kNumRanks>& predictions,
                       const std::vector<TaxonomicLabel>& labels, const Taxonomy& train_taxonomy) {
  MetricsReport report;
  for (int r = 0; r < kNumRanks; ++r) {
    if (predictions[r].size() != labels.size())
      throw ContractError("evaluate: " + std::to_string(predictions[r].size()) + " " + std::string(kRankNames[r]) +
                          " predictions for " + std::to_string(labels.size()) + " labels");
    RankMetrics& m = report.ranks[r];
    std::map<int, std::size_t> true_count, predicted_count, hits;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (!labels[i].labelled(r)) continue;
      const auto truth = train_taxonomy.class_of(labels[i], r);
      if (!truth) {
        ++m.excluded_unseen;
        continue;
      }
      ++m.support;
      const int pred = predictions[r][i];
      ++true_count[*truth];
      ++predicted_count[pred];
      if (pred == *truth) {
        ++correct;
        ++hits[*truth];
      }
    }
    if (m.support == 0) continue;
    m.micro_accuracy = static_cast<double>(correct) / static_cast<double>(m.support);
    double psum = 0, rsum = 0;
    for (const auto& [cls, n_true] : true_count) {
      const auto h = static_cast<double>(hits[cls]);
      const std::size_t n_pred = predicted_count[cls];
      psum += n_pred == 0 ? 0.0 : h / static_cast<double>(n_pred);
      rsum += h / static_cast<double>(n_true);
    }
    m.macro_precision = psum / static_cast<double>(true_count.size());
    m.macro_recall = rsum / static_cast<double>(true_count.size());
  }
  return report;
}

}  // namespace bssm
