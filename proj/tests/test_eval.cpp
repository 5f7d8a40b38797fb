#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "bssm/besthit.hpp"
#include "bssm/error.hpp"
#include "bssm/inference.hpp"
#include "bssm/metrics.hpp"
#include "bssm/stats.hpp"
#include "bssm/timing.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bssm;
using bssm::testing::rec;

namespace {

const std::string kGenusPrefix = "k__K;p__P;c__C;o__O;f__F;g__";

std::array<std::vector<int>, kNumRanks> only_rank(int rank, std::vector<int> preds) {
  std::array<std::vector<int>, kNumRanks> out;
  for (auto& v : out) v.assign(preds.size(), 0);
  out[static_cast<std::size_t>(rank)] = std::move(preds);
  return out;
}

std::map<std::string, int> kmers_of(const std::string& s, int k) {
  std::map<std::string, int> out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(k) <= s.size(); ++i) {
    const std::string w = s.substr(i, static_cast<std::size_t>(k));
    if (w.find_first_not_of("ACGT") == std::string::npos) ++out[w];
  }
  return out;
}

double oracle_similarity(const std::string& q, const std::string& ref, int k) {
  const auto a = kmers_of(q, k), b = kmers_of(ref, k);
  int total = 0, shared = 0;
  for (const auto& [w, n] : a) {
    total += n;
    const auto it = b.find(w);
    if (it != b.end()) shared += std::min(n, it->second);
  }
  return total == 0 ? 0.0 : static_cast<double>(shared) / total;
}

std::string random_acgt(std::mt19937_64& rng, std::size_t n) {
  std::string s(n, 'A');
  for (auto& c : s) c = "ACGT"[rng() % 4];
  return s;
}

}  // namespace

TEST_CASE("worked metrics example") {
  const std::vector<BarcodeRecord> train = {rec("1", "A", kGenusPrefix + "A"), rec("2", "A", kGenusPrefix + "B")};
  const auto tax = Taxonomy::build(train);
  std::vector<TaxonomicLabel> labels;
  for (const char* n : {"A", "A", "B", "B"}) labels.push_back(bssm::testing::parse_label(kGenusPrefix + n));
  const auto rep = evaluate(only_rank(5, {0, 1, 1, 1}), labels, tax);
  const auto& g = rep.ranks[5];
  CHECK(g.micro_accuracy == 0.75);
  CHECK(g.macro_precision == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(g.macro_recall == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(g.support == 4);
  CHECK(rep.ranks[6].support == 0);

  const auto perfect = evaluate(only_rank(5, {0, 0, 1, 1}), labels, tax);
  for (int r = 0; r < 6; ++r) {
    CHECK(perfect.ranks[r].micro_accuracy == 1.0);
    CHECK(perfect.ranks[r].macro_precision == 1.0);
    CHECK(perfect.ranks[r].macro_recall == 1.0);
  }

  labels.push_back(bssm::testing::parse_label(kGenusPrefix + "Z"));
  const auto unseen = evaluate(only_rank(5, {0, 1, 1, 1, 0}), labels, tax);
  CHECK(unseen.ranks[5].excluded_unseen == 1);
  CHECK(unseen.ranks[5].support == 4);
  CHECK(unseen.ranks[4].support == 5);
  CHECK_THROWS_AS(evaluate(only_rank(5, {0, 1}), labels, tax), ContractError);
}

TEST_CASE("metrics agree with a brute-force confusion matrix") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [tax, labels, preds] = bssm::testing::random_metrics_case(rng);
    const auto rep = evaluate(preds, labels, tax);
    for (int r = 0; r < 3; ++r) {
      const auto o = bssm::testing::confusion_oracle(preds[r], labels, tax, r);
      CHECK(rep.ranks[r].support == o.support);
      CHECK(rep.ranks[r].excluded_unseen == o.excluded_unseen);
      CHECK(rep.ranks[r].micro_accuracy == doctest::Approx(o.micro_accuracy).epsilon(1e-12));
      CHECK(rep.ranks[r].macro_precision == doctest::Approx(o.macro_precision).epsilon(1e-12));
      CHECK(rep.ranks[r].macro_recall == doctest::Approx(o.macro_recall).epsilon(1e-12));
      const auto labelled = std::count_if(labels.begin(), labels.end(), [&](const auto& l) { return l.labelled(r); });
      CHECK(rep.ranks[r].support + rep.ranks[r].excluded_unseen == static_cast<std::size_t>(labelled));
      for (double v : {rep.ranks[r].micro_accuracy, rep.ranks[r].macro_precision, rep.ranks[r].macro_recall})
        CHECK((v >= 0.0 && v <= 1.0));
    }
  }
}

TEST_CASE("metrics are invariant to class relabeling") {
  std::mt19937_64 rng(6);
  std::vector<BarcodeRecord> train;
  for (int c = 0; c < 6; ++c) train.push_back(rec("t", "A", kGenusPrefix + "G" + std::to_string(c)));
  auto shuffled = train;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto a = Taxonomy::build(train), b = Taxonomy::build(shuffled);
  std::vector<TaxonomicLabel> labels;
  std::vector<int> pa, pb;
  for (int i = 0; i < 60; ++i) {
    labels.push_back(train[rng() % 6].label);
    const int p = static_cast<int>(rng() % 6);
    pa.push_back(p);
    pb.push_back(*b.class_of(a.label_of(5, p), 5));
  }
  const auto ra = evaluate(only_rank(5, pa), labels, a).ranks[5];
  const auto rb = evaluate(only_rank(5, pb), labels, b).ranks[5];
  CHECK(ra.micro_accuracy == rb.micro_accuracy);
  CHECK(ra.macro_precision == doctest::Approx(rb.macro_precision).epsilon(1e-15));
  CHECK(ra.macro_recall == doctest::Approx(rb.macro_recall).epsilon(1e-15));
}

TEST_CASE("metrics serialization") {
  const auto tax = Taxonomy::build(bssm::testing::toy_taxonomy_records());
  std::vector<TaxonomicLabel> labels;
  for (const auto& r : bssm::testing::toy_taxonomy_records()) labels.push_back(r.label);
  std::array<std::vector<int>, kNumRanks> preds;
  for (int r = 0; r < kNumRanks; ++r) preds[r] = tax.species_ancestors(r);
  auto rep = evaluate(preds, labels, tax);
  rep.ms_per_sample = 1.5;
  const auto j = rep.to_json();
  CHECK(j.dump().find("species") != std::string::npos);
  const auto tsv = rep.to_tsv();
  CHECK(tsv.rfind("rank\taccuracy\tprecision\trecall\tsupport\texcluded_unseen\n", 0) == 0);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 8);
}

TEST_CASE("student t tails against closed forms") {
  CHECK(incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(incomplete_beta(3, 1, 0.4) == doctest::Approx(std::pow(0.4, 3)).epsilon(1e-12));
  CHECK(incomplete_beta(1, 2.5, 0.7) == doctest::Approx(1 - std::pow(0.3, 2.5)).epsilon(1e-12));
  CHECK(incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(incomplete_beta(2, 3, 1.0) == 1.0);
  for (double t : {0.0, 0.5, 1.0, 2.5, 4.0, 12.0}) {
    // df = 1 (Cauchy) and df = 2 have elementary two-sided tails.
    CHECK(student_t_two_sided(t, 1) == doctest::Approx(1 - 2 / std::numbers::pi * std::atan(t)).epsilon(1e-10));
    CHECK(student_t_two_sided(t, 2) == doctest::Approx(1 - t / std::sqrt(t * t + 2)).epsilon(1e-10));
    CHECK(student_t_two_sided(-t, 2) == student_t_two_sided(t, 2));
  }
}

TEST_CASE("paired t-test") {
  const std::vector<double> a = {1, 2, 4}, b = {0, 1, 2};
  const auto r = paired_t_test(a, b);
  CHECK(r.t_statistic == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.degrees_of_freedom == 2);
  CHECK(r.p_value_two_sided == doctest::Approx(0.0572).epsilon(1e-3 / 0.0572));
  CHECK(r.p_value_two_sided == doctest::Approx(1 - 4 / std::sqrt(18.0)).epsilon(1e-10));
  const auto s = paired_t_test(b, a);
  CHECK(s.t_statistic == -r.t_statistic);
  CHECK(s.p_value_two_sided == r.p_value_two_sided);
  CHECK_THROWS_AS(paired_t_test(a, a), DegenerateVarianceError);
  CHECK_THROWS_AS(paired_t_test(std::vector<double>{1}, std::vector<double>{0}), ContractError);
  CHECK_THROWS_AS(paired_t_test(a, std::vector<double>{1, 2}), ContractError);
}

TEST_CASE("best hit examples") {
  const std::vector<BarcodeRecord> refs = {rec("r0", "ACGTACGTAC", kGenusPrefix + "A"),
                                           rec("r1", "TTTTGGGGCCCCAAAA", kGenusPrefix + "B")};
  const auto idx = BestHitIndex::build(refs, 4);
  const auto exact = idx.classify("TTTTGGGGCCCCAAAA");
  CHECK(exact.index == 1);
  CHECK(exact.similarity == 1.0);
  CHECK_FALSE(exact.low_confidence);
  CHECK(exact.label == refs[1].label);

  const auto none = idx.classify("AAGAAGAAGAAG");
  CHECK(none.index == 0);
  CHECK(none.similarity == 0.0);
  CHECK(none.low_confidence);
  CHECK_THROWS_AS(idx.classify("ACG"), ContractError);
  CHECK_THROWS_AS(BestHitIndex::build(refs, 0), ConfigError);
}

TEST_CASE("best hit matches the all-pairs scan") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<BarcodeRecord> refs;
    for (int i = 0; i < 5; ++i) refs.push_back(rec("r", random_acgt(rng, 40 + rng() % 40), kGenusPrefix + std::to_string(i)));
    const int k = 3 + static_cast<int>(rng() % 4);
    const auto idx = BestHitIndex::build(refs, k);
    std::string q = refs[rng() % 5].sequence;
    for (int m = 0; m < 4; ++m) q[rng() % q.size()] = "ACGTN"[rng() % 5];
    if (trial % 3 == 0) q = q.substr(rng() % 10, 30);
    const auto sims = idx.similarities(q);
    std::size_t best = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      const double o = oracle_similarity(q, refs[i].sequence, k);
      CHECK(sims[i] == doctest::Approx(o).epsilon(1e-12));
      if (o > oracle_similarity(q, refs[best].sequence, k)) best = i;
    }
    const auto hit = idx.classify(q);
    CHECK(hit.index == best);
    CHECK(hit.label == refs[best].label);
    // Similarity 1 exactly when the query's k-mers are contained in the hit.
    const auto qk = kmers_of(q, k), rk = kmers_of(refs[best].sequence, k);
    const bool contained = std::all_of(qk.begin(), qk.end(), [&](const auto& kv) {
      const auto it = rk.find(kv.first);
      return it != rk.end() && it->second >= kv.second;
    });
    CHECK((hit.similarity == 1.0) == contained);
  }
}

TEST_CASE("timing and inference on a tiny model") {
  ModelConfig mc;
  mc.vocab_size = static_cast<Index>(Vocab::make_char().size());
  mc.d_model = 16;
  mc.n_blocks = 1;
  mc.head_dim = 8;
  mc.d_state = 4;
  mc.max_len = 40;
  const auto tax = Taxonomy::build(bssm::testing::toy_taxonomy_records());
  const auto counts = tax.class_counts();
  for (int r = 0; r < kNumRanks; ++r) mc.num_classes[r] = counts[r];
  const auto vocab = Vocab::make_char();
  std::mt19937_64 rng(1);
  std::vector<TokenSequence> data;
  for (int i = 0; i < 11; ++i) data.push_back(encode(vocab, random_acgt(rng, 10 + rng() % 20), 38));

  const auto model = init_model<float>(mc, 1);
  const auto t = time_inference(model, data, 4);
  CHECK(t.samples == 11);
  CHECK(t.warmup_batches == 1);
  CHECK(t.timed_batches == 3);
  CHECK(t.ms_per_sample > 0.0);

  const auto multi = predict_ranks(model, tax, data, 4);
  for (int r = 0; r < kNumRanks; ++r) {
    CHECK(multi.classes[r].size() == 11);
    for (std::size_t i = 0; i < 11; ++i) {
      CHECK(multi.classes[r][i] >= 0);
      CHECK(multi.classes[r][i] < tax.num_classes(r));
      CHECK(multi.confidence[r][i] > 0.0);
      CHECK(multi.confidence[r][i] <= 1.0);
    }
  }

  mc.head_mode = HeadMode::SingleHead;
  const auto single = init_model<float>(mc, 1);
  const auto path = predict_ranks(single, tax, data, 4, LiftMode::ArgmaxPath);
  const auto summed = predict_ranks(single, tax, data, 4, LiftMode::ProbabilitySum);
  for (std::size_t i = 0; i < 11; ++i) {
    const int s = path.classes[6][i];
    for (int r = 0; r < kNumRanks; ++r) CHECK(path.classes[r][i] == tax.species_ancestors(r)[static_cast<std::size_t>(s)]);
    CHECK(summed.confidence[0][i] == doctest::Approx(1.0).epsilon(1e-6));
  }
}
