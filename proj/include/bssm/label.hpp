#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace bssm {

inline constexpr int kNumRanks = 7;

enum class Rank : int { Kingdom = 0, Phylum, Class, Order, Family, Genus, Species };

inline constexpr std::array<std::string_view, kNumRanks> kRankNames = {
    "kingdom", "phylum", "class", "order", "family", "genus", "species"};

/// Single-letter header prefixes, `k__` through `s__`.
inline constexpr std::array<char, kNumRanks> kRankPrefixes = {'k', 'p', 'c', 'o', 'f', 'g', 's'};

/// Seven optional class names ordered kingdom..species. A valid label is
/// prefix-closed: a labelled rank implies every rank above it is labelled.
struct TaxonomicLabel {
  std::array<std::optional<std::string>, kNumRanks> ranks;

  const std::optional<std::string>& operator[](int r) const { return ranks[r]; }
  std::optional<std::string>& operator[](int r) { return ranks[r]; }

  /// Number of leading labelled ranks (0..7).
  int depth() const;
  bool prefix_closed() const;
  bool labelled(int r) const { return ranks[r].has_value(); }

  /// Ranks 0..r joined with ';'. Identifies a class by its full path.
  std::string path(int r) const;
  /// Header form `k__A;p__B;...` over the labelled ranks.
  std::string to_header() const;

  friend bool operator==(const TaxonomicLabel&, const TaxonomicLabel&) = default;
};

}  // namespace bssm
