#include "bssm/taxonomy.hpp"

#include <fstream>

#include "bssm/error.hpp"

namespace bssm {

int ClassRegistry::add(const std::string& name) {
  const auto [it, inserted] = index_.emplace(name, static_cast<int>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<int> ClassRegistry::find(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int ClassRegistry::index(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("unknown class '" + name + "'");
  return it->second;
}

std::string to_string(SmoothingMode m) {
  switch (m) {
    case SmoothingMode::None: return "none";
    case SmoothingMode::Standard: return "standard";
    case SmoothingMode::Hierarchical: return "hierarchical";
  }
  return "none";
}

SmoothingMode smoothing_mode_from_string(const std::string& s) {
  if (s == "none") return SmoothingMode::None;
  if (s == "standard") return SmoothingMode::Standard;
  if (s == "hierarchical") return SmoothingMode::Hierarchical;
  throw ConfigError("unknown smoothing mode '" + s + "' (expected none, standard or hierarchical)");
}

std::string to_string(LiftMode m) { return m == LiftMode::ProbabilitySum ? "probability_sum" : "argmax_path"; }

LiftMode lift_mode_from_string(const std::string& s) {
  if (s == "probability_sum") return LiftMode::ProbabilitySum;
  if (s == "argmax_path") return LiftMode::ArgmaxPath;
  throw ConfigError("unknown lift mode '" + s + "' (expected probability_sum or argmax_path)");
}

Taxonomy Taxonomy::build(const std::vector<BarcodeRecord>& records) {
  Taxonomy tax;
  for (const auto& rec : records) {
    const auto& label = rec.label;
    if (!label.prefix_closed())
      throw LabelError("record '" + rec.id + "': label is not prefix-closed (" + label.to_header() + ")");
    int above = -1;
    for (int r = 0; r < label.depth(); ++r) {
      const int before = tax.classes_[r].size();
      const int idx = tax.classes_[r].add(*label[r]);
      if (idx == before) {
        tax.freq_[r].push_back(0);
        if (r > 0) tax.parent_[r].push_back(above);
      } else if (r > 0 && tax.parent_[r][static_cast<std::size_t>(idx)] != above) {
        const TaxonomicLabel first = tax.label_of(r, idx);
        throw TaxonomyConflict("class '" + *label[r] + "' at rank " + std::string(kRankNames[r]) +
                               " has two parents: " + first.path(r) + " vs " + label.path(r));
      }
      ++tax.freq_[r][static_cast<std::size_t>(idx)];
      above = idx;
    }
  }
  tax.rebuild_lifts();
  return tax;
}

void Taxonomy::rebuild_lifts() {
  constexpr int S = kNumRanks - 1;
  const int n_species = num_classes(S);
  for (int r = 0; r < kNumRanks; ++r) {
    species_ancestor_[r].resize(static_cast<std::size_t>(n_species));
    for (int s = 0; s < n_species; ++s) species_ancestor_[r][static_cast<std::size_t>(s)] = ancestor(S, s, r);
  }
}

std::array<int, kNumRanks> Taxonomy::class_counts() const {
  std::array<int, kNumRanks> out{};
  for (int r = 0; r < kNumRanks; ++r) out[r] = num_classes(r);
  return out;
}

int Taxonomy::ancestor(int from, int index, int to) const {
  for (int r = from; r > to; --r) index = parent(r, index);
  return index;
}

Eigen::MatrixXd Taxonomy::lift_matrix(int rank) const {
  const auto& anc = species_ancestor_[rank];
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(anc.size()), num_classes(rank));
  for (std::size_t s = 0; s < anc.size(); ++s) m(static_cast<Eigen::Index>(s), anc[s]) = 1.0;
  return m;
}

std::optional<int> Taxonomy::class_of(const TaxonomicLabel& label, int rank) const {
  if (!label[rank]) return std::nullopt;
  return classes_[rank].find(*label[rank]);
}

TaxonomicLabel Taxonomy::label_of(int rank, int index) const {
  TaxonomicLabel label;
  for (int r = rank; r >= 0; --r) {
    label[r] = classes_[r].name(index);
    if (r > 0) index = parent(r, index);
  }
  return label;
}

nlohmann::json Taxonomy::to_json() const {
  nlohmann::json ranks = nlohmann::json::array();
  for (int r = 0; r < kNumRanks; ++r) {
    ranks.push_back({{"rank", kRankNames[r]},
                     {"classes", classes_[r].names()},
                     {"parents", r == 0 ? std::vector<int>{} : parent_[r]},
                     {"frequencies", freq_[r]}});
  }
  return {{"ranks", ranks}};
}

Taxonomy Taxonomy::from_json(const nlohmann::json& j) {
  Taxonomy tax;
  const auto& ranks = j.at("ranks");
  if (ranks.size() != kNumRanks) throw ConfigError("taxonomy must list exactly seven ranks");
  for (int r = 0; r < kNumRanks; ++r) {
    const auto& entry = ranks[static_cast<std::size_t>(r)];
    for (const auto& name : entry.at("classes")) tax.classes_[r].add(name.get<std::string>());
    tax.freq_[r] = entry.at("frequencies").get<std::vector<long>>();
    if (static_cast<int>(tax.freq_[r].size()) != tax.num_classes(r))
      throw ConfigError("taxonomy: frequency count mismatch at rank " + std::string(kRankNames[r]));
    if (r > 0) {
      tax.parent_[r] = entry.at("parents").get<std::vector<int>>();
      if (static_cast<int>(tax.parent_[r].size()) != tax.num_classes(r))
        throw ConfigError("taxonomy: parent count mismatch at rank " + std::string(kRankNames[r]));
      for (int p : tax.parent_[r])
        if (p < 0 || p >= tax.num_classes(r - 1))
          throw ConfigError("taxonomy: parent index out of range at rank " + std::string(kRankNames[r]));
    }
  }
  tax.rebuild_lifts();
  return tax;
}

void Taxonomy::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return from_json(nlohmann::json::parse(in));
}

ClassWeights class_weights(const Taxonomy& taxonomy) {
  ClassWeights w;
  for (int r = 0; r < kNumRanks; ++r) {
    const auto& freq = taxonomy.frequencies(r);
    Eigen::VectorXd raw(static_cast<Eigen::Index>(freq.size()));
    for (std::size_t c = 0; c < freq.size(); ++c) {
      if (freq[c] <= 0) throw ContractError("class_weights: zero frequency at rank " + std::string(kRankNames[r]));
      raw(static_cast<Eigen::Index>(c)) = 1.0 / std::sqrt(static_cast<double>(freq[c]));
    }
    if (raw.size() == 0) {
      w.per_rank[r] = raw;
    } else if ((raw.array() == raw(0)).all()) {
      w.per_rank[r] = Eigen::VectorXd::Ones(raw.size());
    } else {
      w.per_rank[r] = raw / raw.mean();
    }
  }
  return w;
}

int shared_ancestor_depth(const Taxonomy& taxonomy, int rank, int a, int b) {
  int shared = 0;
  for (int r = 0; r < rank; ++r) {
    if (taxonomy.ancestor(rank, a, r) != taxonomy.ancestor(rank, b, r)) break;
    ++shared;
  }
  return shared;
}

Eigen::VectorXd lift_distribution(const Taxonomy& taxonomy, const Eigen::VectorXd& probs, int from, int to) {
  if (probs.size() != taxonomy.num_classes(from)) throw ShapeError("lift_distribution: length mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(taxonomy.num_classes(to));
  for (int c = 0; c < taxonomy.num_classes(from); ++c) out(taxonomy.ancestor(from, c, to)) += probs(c);
  return out;
}

TargetDistribution smooth_target(const Taxonomy& taxonomy, const TaxonomicLabel& label, SmoothingMode mode,
                                 double epsilon) {
  if (!(epsilon >= 0 && epsilon < 1)) throw ConfigError("smoothing epsilon must lie in [0,1)");
  if (!label.prefix_closed()) throw LabelError("label is not prefix-closed: " + label.to_header());
  TargetDistribution target;
  const int depth = label.depth();
  if (depth == 0) return target;

  const int deep = depth - 1;
  const int y = taxonomy.classes(deep).index(*label[deep]);
  const int k = taxonomy.num_classes(deep);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(k);
  q(y) = 1.0;
  if (mode != SmoothingMode::None && k > 1) {
    q(y) = 1.0 - epsilon;
    Eigen::VectorXd share = Eigen::VectorXd::Ones(k);
    if (mode == SmoothingMode::Hierarchical) {
      for (int c = 0; c < k; ++c) share(c) = shared_ancestor_depth(taxonomy, deep, c, y);
    }
    share(y) = 0.0;
    double total = share.sum();
    if (total == 0.0) {
      share.setOnes();
      share(y) = 0.0;
      total = k - 1;
    }
    for (int c = 0; c < k; ++c)
      if (c != y) q(c) = epsilon * share(c) / total;
  }

  for (int r = 0; r <= deep; ++r) {
    target.per_rank[r] = r == deep ? q : lift_distribution(taxonomy, q, deep, r);
    target.mask[r] = true;
    target.true_class[r] = taxonomy.ancestor(deep, y, r);
  }
  return target;
}

std::array<Eigen::VectorXd, kNumRanks> lift_species_probs(const Taxonomy& taxonomy,
                                                          const Eigen::VectorXd& species_probs, LiftMode mode) {
  constexpr int S = kNumRanks - 1;
  if (species_probs.size() != taxonomy.num_classes(S))
    throw ShapeError("lift_species_probs: got " + std::to_string(species_probs.size()) + " probabilities for " +
                     std::to_string(taxonomy.num_classes(S)) + " species");
  std::array<Eigen::VectorXd, kNumRanks> out;
  if (mode == LiftMode::ProbabilitySum) {
    for (int r = 0; r < kNumRanks; ++r) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(taxonomy.num_classes(r));
      const auto& anc = taxonomy.species_ancestors(r);
      for (Eigen::Index s = 0; s < species_probs.size(); ++s) v(anc[static_cast<std::size_t>(s)]) += species_probs(s);
      out[r] = std::move(v);
    }
  } else {
    Eigen::Index best = 0;
    species_probs.maxCoeff(&best);
    for (int r = 0; r < kNumRanks; ++r) {
      out[r] = Eigen::VectorXd::Zero(taxonomy.num_classes(r));
      out[r](taxonomy.species_ancestors(r)[static_cast<std::size_t>(best)]) = 1.0;
    }
  }
  return out;
}

}  // namespace bssm
