#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "bssm/label.hpp"
#include "json.hpp"

namespace bssm {

/// One barcode: identifier, uppercase IUPAC sequence, partial seven-rank label.
struct BarcodeRecord {
  std::string id;
  std::string sequence;
  TaxonomicLabel label;

  friend bool operator==(const BarcodeRecord&, const BarcodeRecord&) = default;
};

bool is_iupac(char c);
bool is_acgt(char c);

/// Reads FASTA with `>{id}|k__..;p__..;...` headers. Throws ParseError with the
/// offending line number on a malformed header or a non-IUPAC character.
std::vector<BarcodeRecord> parse_fasta(const std::filesystem::path& path);
std::vector<BarcodeRecord> parse_fasta(std::istream& in);

void write_fasta(std::ostream& out, const std::vector<BarcodeRecord>& records);
void write_fasta(const std::filesystem::path& path, const std::vector<BarcodeRecord>& records);

struct FilterConfig {
  double length_sigma = 4.0;
  double max_ambiguous_fraction = 0.05;
  int min_class_size = 3;

  void validate() const;
};

struct FilterStats {
  std::size_t input = 0;
  std::size_t duplicates_removed = 0;
  std::size_t length_outliers_removed = 0;
  std::size_t ambiguous_removed = 0;
  std::size_t small_class_removed = 0;
  std::size_t small_class_iterations = 0;
  std::size_t output = 0;
  double length_mean = 0.0;
  double length_std = 0.0;
  double length_lower = 0.0;
  double length_upper = 0.0;
};

void to_json(nlohmann::json& j, const FilterStats& s);

/// Retained closed interval [mean - sigma*sd, mean + sigma*sd].
std::pair<double, double> length_bounds(double mean, double sd, double sigma);

/// Fraction of characters outside {A,C,G,T}.
double ambiguous_fraction(const std::string& sequence);

/// The four preprocessing filters in order: exact (sequence, label) dedup,
/// length outliers, ambiguous-base fraction, then small classes removed at
/// every rank until nothing else changes.
std::pair<std::vector<BarcodeRecord>, FilterStats> filter_dataset(
    const std::vector<BarcodeRecord>& records, const FilterConfig& cfg);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<BarcodeRecord> train, val, test;
};

DatasetSplit split_dataset(const std::vector<BarcodeRecord>& records, const SplitFractions& fractions,
                           std::uint64_t seed);

struct OverlapReport {
  std::size_t species_total_test = 0;
  std::size_t species_overlap_n = 0;
  double species_overlap_pct = 0.0;
  std::size_t barcode_total_test = 0;
  std::size_t barcode_overlap_n = 0;
  double barcode_overlap_pct = 0.0;
};

void to_json(nlohmann::json& j, const OverlapReport& r);

OverlapReport overlap_report(const std::vector<BarcodeRecord>& train,
                             const std::vector<BarcodeRecord>& test);

struct SynthConfig {
  std::array<int, kNumRanks> rank_fanouts{1, 2, 2, 2, 2, 2, 2};
  int base_length = 200;
  int length_jitter = 10;
  std::array<double, kNumRanks> mutation_rate_per_rank{0.0, 0.15, 0.12, 0.10, 0.08, 0.06, 0.04};
  /// Per-copy substitution rate applied to each emitted sample.
  double sample_mutation_rate = 0.01;
  int samples_per_species = 10;
  std::array<double, kNumRanks> label_dropout_per_rank{0, 0, 0, 0, 0, 0, 0};
  std::uint64_t seed = 0;
  std::uint64_t max_species = 1'000'000;

  void validate() const;
};

/// Random taxonomy tree with per-rank sequence drift and noisy samples.
std::vector<BarcodeRecord> synth_generate(const SynthConfig& cfg);

}  // namespace bssm
