#include "bssm/label.hpp"

namespace bssm {

int TaxonomicLabel::depth() const {
  int d = 0;
  while (d < kNumRanks && ranks[d]) ++d;
  return d;
}

bool TaxonomicLabel::prefix_closed() const {
  const int d = depth();
  for (int r = d; r < kNumRanks; ++r)
    if (ranks[r]) return false;
  return true;
}

std::string TaxonomicLabel::path(int r) const {
  std::string out;
  for (int i = 0; i <= r; ++i) {
    if (i) out += ';';
    out += ranks[i].value_or("");
  }
  return out;
}

std::string TaxonomicLabel::to_header() const {
  std::string out;
  for (int r = 0; r < kNumRanks && ranks[r]; ++r) {
    if (r) out += ';';
    out += kRankPrefixes[r];
    out += "__";
    out += *ranks[r];
  }
  return out;
}

}  // namespace bssm
