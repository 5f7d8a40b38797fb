#include "bssm/besthit.hpp"

#include "bssm/error.hpp"

namespace bssm {

namespace {

int base_code(char c) {
  switch (c) {
    case 'A': return 0;
    case 'C': return 1;
    case 'G': return 2;
    case 'T': return 3;
    default: return -1;
  }
}

}  // namespace

std::unordered_map<std::uint64_t, std::uint32_t> kmer_counts(const std::string& seq, int k) {
  if (k < 1 || k > 32) throw ConfigError("best-hit k must lie in [1, 32]");
  std::unordered_map<std::uint64_t, std::uint32_t> counts;
  const std::uint64_t mask = k == 32 ? ~0ull : ((1ull << (2 * k)) - 1);
  std::uint64_t code = 0;
  int valid = 0;  // length of the current ACGT run
  for (char c : seq) {
    const int b = base_code(c);
    if (b < 0) {
      valid = 0;
      continue;
    }
    code = ((code << 2) | static_cast<std::uint64_t>(b)) & mask;
    if (++valid >= k) ++counts[code];
  }
  return counts;
}

BestHitIndex BestHitIndex::build(const std::vector<BarcodeRecord>& references, int k) {
  if (k < 1 || k > 32) throw ConfigError("best-hit k must lie in [1, 32]");
  if (references.empty()) throw EmptyDatasetError("best-hit index needs at least one reference");
  BestHitIndex idx;
  idx.k_ = k;
  for (std::size_t i = 0; i < references.size(); ++i) {
    idx.labels_.push_back(references[i].label);
    for (const auto& [kmer, n] : kmer_counts(references[i].sequence, k))
      idx.postings_[kmer].emplace_back(static_cast<std::uint32_t>(i), n);
  }
  return idx;
}

std::vector<double> BestHitIndex::similarities(const std::string& query) const {
  if (query.size() < static_cast<std::size_t>(k_))
    throw ContractError("best-hit query of length " + std::to_string(query.size()) + " is shorter than k = " +
                        std::to_string(k_));
  const auto q = kmer_counts(query, k_);
  std::uint64_t total = 0;
  for (const auto& [kmer, n] : q) total += n;
  std::vector<double> shared(labels_.size(), 0.0);
  if (total == 0) return shared;
  for (const auto& [kmer, n] : q) {
    auto it = postings_.find(kmer);
    if (it == postings_.end()) continue;
    for (const auto& [ref, m] : it->second) shared[ref] += std::min(n, m);
  }
  for (double& s : shared) s /= static_cast<double>(total);
  return shared;
}

BestHit BestHitIndex::classify(const std::string& query) const {
  const auto sims = similarities(query);
  BestHit hit;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (sims[i] > hit.similarity) {
      hit.similarity = sims[i];
      hit.index = i;
    }
  }
  hit.low_confidence = hit.similarity < kLowConfidence;
  hit.label = labels_[hit.index];
  return hit;
}

}  // namespace bssm
