#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "bssm/seqdata.hpp"

namespace bssm {

inline constexpr double kLowConfidence = 0.1;

struct BestHit {
  std::size_t index = 0;
  double similarity = 0.0;
  bool low_confidence = true;
  TaxonomicLabel label;
};

/// k-mer multiset fingerprints of reference sequences behind an inverted
/// index. k-mers containing a non-ACGT base are ignored.
class BestHitIndex {
 public:
  static BestHitIndex build(const std::vector<BarcodeRecord>& references, int k = 8);

  int k() const { return k_; }
  std::size_t size() const { return labels_.size(); }

  /// Reference maximizing sum_kmer min(cQ, cS) / |Q| (first index on ties).
  BestHit classify(const std::string& query) const;
  /// Containment similarity of `query` against every reference.
  std::vector<double> similarities(const std::string& query) const;

 private:
  int k_ = 8;
  std::vector<TaxonomicLabel> labels_;
  std::unordered_map<std::uint64_t, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;
};

/// k-mer -> count for the ACGT-only windows of `seq`.
std::unordered_map<std::uint64_t, std::uint32_t> kmer_counts(const std::string& seq, int k);

}  // namespace bssm
