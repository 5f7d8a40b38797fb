#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "bssm/seqdata.hpp"

namespace bssm::testing {

inline TaxonomicLabel parse_label(const std::string& header) {
  TaxonomicLabel l;
  std::size_t start = 0;
  int r = 0;
  while (start < header.size() && r < kNumRanks) {
    const std::size_t end = std::min(header.find(';', start), header.size());
    const std::string tok = header.substr(start, end - start);
    if (tok.size() > 3) l[r] = tok.substr(3);
    ++r;
    start = end + 1;
  }
  return l;
}

inline BarcodeRecord rec(std::string id, std::string seq, const std::string& header) {
  return {std::move(id), std::move(seq), parse_label(header)};
}

inline const char* kHigher = "k__Fungi;p__Asco;c__Sordario;o__Hypo;f__Nectria;";

/// Ten records exercising every filter: a duplicate, an ambiguous sequence,
/// a two-member species and a cascade through a genus-only record.
inline std::vector<BarcodeRecord> filter_fixture() {
  const std::string h = kHigher;
  return {
      rec("r0", "ACGTACGTACGTACGTACGT", h + "g__G1;s__S1"),
      rec("r1", "ACGTACGTACGTACGTACGT", h + "g__G1;s__S1"),  // duplicate of r0
      rec("r2", "ACGTACGTACGTACGTACGA", h + "g__G1;s__S1"),
      rec("r3", "ACGTACGTACGTACGTACGC", h + "g__G1;s__S1"),
      rec("r4", "TTGTACGTACGTACGTACGT", h + "g__G1;s__S2"),
      rec("r5", "TTGTACGTACGTACGTACGA", h + "g__G1;s__S2"),
      rec("r6", "GGGTACGTACGTACGTACGT", h + "g__G2;s__S3"),
      rec("r7", "GGGTACGTACGTACGTACGA", h + "g__G2;s__S3"),
      rec("r8", "GGGTACGTACNNACGTACGT", h + "g__G2;s__S3"),  // 10% ambiguous
      rec("r9", "CCCTACGTACGTACGTACGT", h + "g__G2"),
  };
}

/// Independent set-based reimplementation of the four filters.
inline std::vector<BarcodeRecord> brute_force_filter(const std::vector<BarcodeRecord>& in, double sigma,
                                                     double max_ambig, int min_class) {
  std::vector<BarcodeRecord> a;
  for (const auto& r : in) {
    bool seen = false;
    for (const auto& k : a) seen = seen || (k.sequence == r.sequence && k.label == r.label);
    if (!seen) a.push_back(r);
  }
  double mean = 0;
  for (const auto& r : a) mean += static_cast<double>(r.sequence.size());
  mean /= static_cast<double>(a.size());
  double var = 0;
  for (const auto& r : a) var += std::pow(static_cast<double>(r.sequence.size()) - mean, 2);
  const double sd = std::sqrt(var / static_cast<double>(a.size()));
  std::vector<BarcodeRecord> b;
  for (const auto& r : a) {
    const double len = static_cast<double>(r.sequence.size());
    if (len >= mean - sigma * sd && len <= mean + sigma * sd) b.push_back(r);
  }
  std::vector<BarcodeRecord> c;
  for (const auto& r : b) {
    const auto bad = std::count_if(r.sequence.begin(), r.sequence.end(),
                                   [](char ch) { return ch != 'A' && ch != 'C' && ch != 'G' && ch != 'T'; });
    if (static_cast<double>(bad) / static_cast<double>(r.sequence.size()) <= max_ambig) c.push_back(r);
  }
  while (true) {
    std::vector<BarcodeRecord> next;
    for (const auto& r : c) {
      bool ok = true;
      for (int rank = 0; rank < kNumRanks && ok; ++rank) {
        if (!r.label[rank]) continue;
        int members = 0;
        for (const auto& o : c) {
          bool same = o.label[rank].has_value();
          for (int q = 0; q <= rank && same; ++q) same = o.label[q] == r.label[q];
          members += same ? 1 : 0;
        }
        ok = members >= min_class;
      }
      if (ok) next.push_back(r);
    }
    if (next.size() == c.size()) return next;
    c = std::move(next);
  }
}

/// Species A, B under genus g1 and C under g2, one family above.
inline std::vector<BarcodeRecord> toy_taxonomy_records() {
  const std::string h = kHigher;
  return {rec("a", "ACGTACGT", h + "g__g1;s__A"), rec("b", "ACGTACGA", h + "g__g1;s__B"),
          rec("c", "ACGTACGC", h + "g__g2;s__C")};
}

}  // namespace bssm::testing
