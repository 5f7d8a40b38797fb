#include "bssm/seqdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "bssm/error.hpp"

namespace bssm {

bool is_iupac(char c) {
  switch (c) {
    case 'A': case 'C': case 'G': case 'T': case 'R': case 'Y': case 'S': case 'W':
    case 'K': case 'M': case 'B': case 'D': case 'H': case 'V': case 'N':
      return true;
    default:
      return false;
  }
}

bool is_acgt(char c) { return c == 'A' || c == 'C' || c == 'G' || c == 'T'; }

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

TaxonomicLabel parse_label(std::string_view text, std::size_t line) {
  TaxonomicLabel label;
  if (text.empty()) return label;
  if (text.find('|') != std::string_view::npos) throw ParseError(line, "rank values must not contain '|'");
  int rank = 0;
  bool ended = false;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(';', start), text.size());
    const std::string_view token = text.substr(start, end - start);
    if (rank >= kNumRanks) throw ParseError(line, "more than seven rank tokens in header");
    if (token.size() < 3 || token[0] != kRankPrefixes[rank] || token[1] != '_' || token[2] != '_') {
      throw ParseError(line, std::string("expected rank prefix '") + kRankPrefixes[rank] + "__' in token '" +
                                 std::string(token) + "'");
    }
    const std::string_view value = token.substr(3);
    if (value.empty()) {
      ended = true;
    } else {
      if (ended) throw ParseError(line, "labelled rank below an unlabelled rank");
      label[rank] = std::string(value);
    }
    ++rank;
    start = end + 1;
  }
  return label;
}

}  // namespace

std::vector<BarcodeRecord> parse_fasta(std::istream& in) {
  std::vector<BarcodeRecord> records;
  std::string line;
  std::size_t line_no = 0;
  std::size_t header_line = 0;
  bool open = false;

  auto close_record = [&] {
    if (open && records.back().sequence.empty()) throw ParseError(header_line, "record has an empty sequence");
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '>') {
      close_record();
      const std::string_view header = view.substr(1);
      const std::size_t bar = header.find('|');
      BarcodeRecord rec;
      rec.id = std::string(trim(header.substr(0, bar)));
      if (rec.id.empty()) throw ParseError(line_no, "empty record id");
      if (bar != std::string_view::npos) rec.label = parse_label(trim(header.substr(bar + 1)), line_no);
      records.push_back(std::move(rec));
      header_line = line_no;
      open = true;
      continue;
    }
    if (!open) throw ParseError(line_no, "sequence data before the first header");
    std::string& seq = records.back().sequence;
    for (char c : view) {
      const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      if (!is_iupac(u)) throw ParseError(line_no, std::string("non-IUPAC character '") + c + "'");
      seq.push_back(u);
    }
  }
  close_record();
  return records;
}

std::vector<BarcodeRecord> parse_fasta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_fasta(in);
}

void write_fasta(std::ostream& out, const std::vector<BarcodeRecord>& records) {
  for (const auto& r : records) {
    out << '>' << r.id;
    if (r.label.depth() > 0) out << '|' << r.label.to_header();
    out << '\n' << r.sequence << '\n';
  }
}

void write_fasta(const std::filesystem::path& path, const std::vector<BarcodeRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_fasta(out, records);
}

void FilterConfig::validate() const {
  if (!(length_sigma > 0)) throw ConfigError("filter.length_sigma must be > 0");
  if (!(max_ambiguous_fraction >= 0 && max_ambiguous_fraction <= 1))
    throw ConfigError("filter.max_ambiguous_fraction must lie in [0,1]");
  if (min_class_size < 1) throw ConfigError("filter.min_class_size must be >= 1");
}

void to_json(nlohmann::json& j, const FilterStats& s) {
  j = {{"input", s.input},
       {"duplicates_removed", s.duplicates_removed},
       {"length_outliers_removed", s.length_outliers_removed},
       {"ambiguous_removed", s.ambiguous_removed},
       {"small_class_removed", s.small_class_removed},
       {"small_class_iterations", s.small_class_iterations},
       {"output", s.output},
       {"length_mean", s.length_mean},
       {"length_std", s.length_std},
       {"length_lower", s.length_lower},
       {"length_upper", s.length_upper}};
}

std::pair<double, double> length_bounds(double mean, double sd, double sigma) {
  return {mean - sigma * sd, mean + sigma * sd};
}

double ambiguous_fraction(const std::string& sequence) {
  if (sequence.empty()) return 0.0;
  const auto n = std::count_if(sequence.begin(), sequence.end(), [](char c) { return !is_acgt(c); });
  return static_cast<double>(n) / static_cast<double>(sequence.size());
}

std::pair<std::vector<BarcodeRecord>, FilterStats> filter_dataset(const std::vector<BarcodeRecord>& records,
                                                                  const FilterConfig& cfg) {
  cfg.validate();
  if (records.empty()) throw EmptyDatasetError("filter_dataset: no input records");
  FilterStats stats;
  stats.input = records.size();

  // (1) exact (sequence, label) duplicates, first occurrence wins
  std::vector<BarcodeRecord> kept;
  {
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
      if (seen.insert(r.sequence + '\x1f' + r.label.to_header()).second) kept.push_back(r);
    }
    stats.duplicates_removed = records.size() - kept.size();
  }

  // (2) length outliers, population statistics of the deduplicated set
  {
    double sum = 0;
    for (const auto& r : kept) sum += static_cast<double>(r.sequence.size());
    const double mean = sum / static_cast<double>(kept.size());
    double ss = 0;
    for (const auto& r : kept) {
      const double dev = static_cast<double>(r.sequence.size()) - mean;
      ss += dev * dev;
    }
    const double sd = std::sqrt(ss / static_cast<double>(kept.size()));
    const auto [lo, hi] = length_bounds(mean, sd, cfg.length_sigma);
    stats.length_mean = mean;
    stats.length_std = sd;
    stats.length_lower = lo;
    stats.length_upper = hi;
    const std::size_t before = kept.size();
    std::erase_if(kept, [&](const BarcodeRecord& r) {
      const auto len = static_cast<double>(r.sequence.size());
      return len < lo || len > hi;
    });
    stats.length_outliers_removed = before - kept.size();
  }

  // (3) ambiguous bases
  {
    const std::size_t before = kept.size();
    std::erase_if(kept, [&](const BarcodeRecord& r) {
      return ambiguous_fraction(r.sequence) > cfg.max_ambiguous_fraction;
    });
    stats.ambiguous_removed = before - kept.size();
  }

  // (4) small classes at any rank, to a fixed point
  {
    const std::size_t before = kept.size();
    const auto min_size = static_cast<std::size_t>(cfg.min_class_size);
    for (;;) {
      std::array<std::unordered_map<std::string, std::size_t>, kNumRanks> counts;
      for (const auto& r : kept)
        for (int k = 0; k < r.label.depth(); ++k) ++counts[k][r.label.path(k)];
      const std::size_t n = kept.size();
      std::erase_if(kept, [&](const BarcodeRecord& r) {
        for (int k = 0; k < r.label.depth(); ++k)
          if (counts[k][r.label.path(k)] < min_size) return true;
        return false;
      });
      ++stats.small_class_iterations;
      if (kept.size() == n) break;
    }
    stats.small_class_removed = before - kept.size();
  }

  stats.output = kept.size();
  if (kept.empty()) throw EmptyDatasetError("filter_dataset: every record was filtered out");
  return {std::move(kept), stats};
}

DatasetSplit split_dataset(const std::vector<BarcodeRecord>& records, const SplitFractions& f,
                           std::uint64_t seed) {
  if (!(f.train > 0 && f.val > 0 && f.test > 0))
    throw ConfigError("split fractions must all be positive");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n = records.size();
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(f.train * static_cast<double>(n))));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(f.val * static_cast<double>(n))));

  DatasetSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.push_back(records[order[i]]);
  }
  return out;
}

void to_json(nlohmann::json& j, const OverlapReport& r) {
  j = {{"species_total_test", r.species_total_test}, {"species_overlap_n", r.species_overlap_n},
       {"species_overlap_pct", r.species_overlap_pct}, {"barcode_total_test", r.barcode_total_test},
       {"barcode_overlap_n", r.barcode_overlap_n},   {"barcode_overlap_pct", r.barcode_overlap_pct}};
}

OverlapReport overlap_report(const std::vector<BarcodeRecord>& train, const std::vector<BarcodeRecord>& test) {
  auto species_key = [](const BarcodeRecord& r) { return r.label.path(kNumRanks - 1); };
  std::unordered_set<std::string> train_species, train_seqs, test_species, test_seqs;
  for (const auto& r : train) {
    if (r.label.depth() == kNumRanks) train_species.insert(species_key(r));
    train_seqs.insert(r.sequence);
  }
  for (const auto& r : test) {
    if (r.label.depth() == kNumRanks) test_species.insert(species_key(r));
    test_seqs.insert(r.sequence);
  }
  auto pct = [](std::size_t n, std::size_t total) {
    return total == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(total);
  };
  OverlapReport rep;
  rep.species_total_test = test_species.size();
  rep.species_overlap_n = static_cast<std::size_t>(
      std::count_if(test_species.begin(), test_species.end(), [&](const auto& s) { return train_species.count(s); }));
  rep.species_overlap_pct = pct(rep.species_overlap_n, rep.species_total_test);
  rep.barcode_total_test = test_seqs.size();
  rep.barcode_overlap_n = static_cast<std::size_t>(
      std::count_if(test_seqs.begin(), test_seqs.end(), [&](const auto& s) { return train_seqs.count(s); }));
  rep.barcode_overlap_pct = pct(rep.barcode_overlap_n, rep.barcode_total_test);
  return rep;
}

void SynthConfig::validate() const {
  for (int r = 0; r < kNumRanks; ++r) {
    if (rank_fanouts[r] < 1) throw ConfigError("synth.rank_fanouts must be >= 1");
    if (!(mutation_rate_per_rank[r] >= 0 && mutation_rate_per_rank[r] <= 1))
      throw ConfigError("synth.mutation_rate_per_rank must lie in [0,1]");
    if (!(label_dropout_per_rank[r] >= 0 && label_dropout_per_rank[r] <= 1))
      throw ConfigError("synth.label_dropout_per_rank must lie in [0,1]");
  }
  if (base_length < 1) throw ConfigError("synth.base_length must be >= 1");
  if (length_jitter < 0) throw ConfigError("synth.length_jitter must be >= 0");
  if (samples_per_species < 1) throw ConfigError("synth.samples_per_species must be >= 1");
  if (!(sample_mutation_rate >= 0 && sample_mutation_rate <= 1))
    throw ConfigError("synth.sample_mutation_rate must lie in [0,1]");
  double species = 1;
  for (int f : rank_fanouts) species *= f;
  if (species > static_cast<double>(max_species))
    throw ConfigError("synth: fanout product " + std::to_string(static_cast<long long>(species)) +
                      " exceeds the species cap " + std::to_string(max_species));
}

namespace {

constexpr std::array<char, 4> kBases = {'A', 'C', 'G', 'T'};

std::string random_sequence(std::mt19937_64& rng, int length) {
  std::uniform_int_distribution<int> base(0, 3);
  std::string s(static_cast<std::size_t>(length), 'A');
  for (char& c : s) c = kBases[base(rng)];
  return s;
}

std::string mutate(std::mt19937_64& rng, const std::string& src, double rate) {
  std::string s = src;
  if (rate <= 0) return s;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> shift(1, 3);
  for (char& c : s) {
    if (u(rng) < rate) {
      const int idx = static_cast<int>(std::find(kBases.begin(), kBases.end(), c) - kBases.begin());
      c = kBases[(idx + shift(rng)) % 4];
    }
  }
  return s;
}

}  // namespace

std::vector<BarcodeRecord> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);

  struct Node {
    std::string sequence;
    TaxonomicLabel label;
  };
  std::vector<Node> level{{random_sequence(rng, cfg.base_length), {}}};
  for (int r = 0; r < kNumRanks; ++r) {
    std::vector<Node> next;
    int counter = 0;
    for (const auto& parent : level) {
      for (int c = 0; c < cfg.rank_fanouts[r]; ++c) {
        Node child{mutate(rng, parent.sequence, cfg.mutation_rate_per_rank[r]), parent.label};
        child.label[r] = std::string(kRankNames[r]) + std::to_string(counter++);
        next.push_back(std::move(child));
      }
    }
    level = std::move(next);
  }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> left(0, cfg.length_jitter);
  std::uniform_int_distribution<int> right(-cfg.length_jitter, cfg.length_jitter);
  std::vector<BarcodeRecord> out;
  out.reserve(level.size() * static_cast<std::size_t>(cfg.samples_per_species));
  for (const auto& species : level) {
    for (int k = 0; k < cfg.samples_per_species; ++k) {
      std::string seq = mutate(rng, species.sequence, cfg.sample_mutation_rate);
      if (cfg.length_jitter > 0) {
        const int l = left(rng);
        const int rdelta = right(rng);
        if (rdelta < 0) {
          seq.resize(seq.size() - std::min<std::size_t>(seq.size() - 1, static_cast<std::size_t>(-rdelta)));
        } else {
          seq += random_sequence(rng, rdelta);
        }
        seq.erase(0, std::min<std::size_t>(seq.size() - 1, static_cast<std::size_t>(l)));
      }
      BarcodeRecord rec{"syn" + std::to_string(out.size()), std::move(seq), species.label};
      for (int r = 0; r < kNumRanks; ++r) {
        if (u(rng) < cfg.label_dropout_per_rank[r]) {
          for (int q = r; q < kNumRanks; ++q) rec.label[q].reset();
          break;
        }
      }
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace bssm
