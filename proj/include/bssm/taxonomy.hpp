#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bssm/label.hpp"
#include "bssm/seqdata.hpp"
#include "json.hpp"

namespace bssm {

/// Name <-> index registry for the classes of one rank, in first-seen order.
class ClassRegistry {
 public:
  int add(const std::string& name);
  std::optional<int> find(const std::string& name) const;
  int index(const std::string& name) const;  // throws LookupError
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

/// Per-rank probability vectors plus a mask of the ranks that carry a target.
struct TargetDistribution {
  std::array<Eigen::VectorXd, kNumRanks> per_rank;
  std::array<bool, kNumRanks> mask{};
  /// True class index at each unmasked rank, -1 elsewhere.
  std::array<int, kNumRanks> true_class{-1, -1, -1, -1, -1, -1, -1};
};

struct ClassWeights {
  std::array<Eigen::VectorXd, kNumRanks> per_rank;
};

enum class SmoothingMode { None, Standard, Hierarchical };
enum class LiftMode { ProbabilitySum, ArgmaxPath };

std::string to_string(SmoothingMode m);
SmoothingMode smoothing_mode_from_string(const std::string& s);
std::string to_string(LiftMode m);
LiftMode lift_mode_from_string(const std::string& s);

/// Seven-rank class structure built from training labels. Parents are stored
/// per rank; species-to-ancestor lift maps are derived from them.
class Taxonomy {
 public:
  static Taxonomy build(const std::vector<BarcodeRecord>& records);

  const ClassRegistry& classes(int rank) const { return classes_[rank]; }
  int num_classes(int rank) const { return classes_[rank].size(); }
  std::array<int, kNumRanks> class_counts() const;
  /// Parent class index at rank-1 of class `index` at `rank` (rank > 0).
  int parent(int rank, int index) const { return parent_[rank][static_cast<std::size_t>(index)]; }
  /// Ancestor of class `index` at rank `from` at the shallower rank `to`.
  int ancestor(int from, int index, int to) const;
  const std::vector<long>& frequencies(int rank) const { return freq_[rank]; }

  /// Species -> rank-r class index; the nonzero column of each lift-matrix row.
  const std::vector<int>& species_ancestors(int rank) const { return species_ancestor_[rank]; }
  /// Dense binary (species x classes at rank) matrix with one 1 per row.
  Eigen::MatrixXd lift_matrix(int rank) const;

  /// Class index of `label` at `rank`, or nullopt if unseen or unlabelled.
  std::optional<int> class_of(const TaxonomicLabel& label, int rank) const;
  /// Full label of a class, ranks 0..rank filled from the parent chain.
  TaxonomicLabel label_of(int rank, int index) const;

  nlohmann::json to_json() const;
  static Taxonomy from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Taxonomy load(const std::filesystem::path& path);

 private:
  void rebuild_lifts();

  std::array<ClassRegistry, kNumRanks> classes_;
  std::array<std::vector<int>, kNumRanks> parent_;
  std::array<std::vector<long>, kNumRanks> freq_;
  std::array<std::vector<int>, kNumRanks> species_ancestor_;
};

/// freq^-1/2 per class, rescaled so each rank's mean weight is 1.
ClassWeights class_weights(const Taxonomy& taxonomy);

/// Number of shared leading ranks (kingdom counts as 1) between two classes
/// of the same rank.
int shared_ancestor_depth(const Taxonomy& taxonomy, int rank, int a, int b);

/// Smoothed target at the deepest labelled rank, lifted to every shallower
/// rank; deeper ranks are masked.
TargetDistribution smooth_target(const Taxonomy& taxonomy, const TaxonomicLabel& label, SmoothingMode mode,
                                 double epsilon);

/// Sums a distribution over rank-`from` classes into rank-`to` ancestors.
Eigen::VectorXd lift_distribution(const Taxonomy& taxonomy, const Eigen::VectorXd& probs, int from, int to);

std::array<Eigen::VectorXd, kNumRanks> lift_species_probs(const Taxonomy& taxonomy,
                                                          const Eigen::VectorXd& species_probs, LiftMode mode);

}  // namespace bssm
