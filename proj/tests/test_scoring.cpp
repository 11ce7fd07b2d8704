#include <gtest/gtest.h>

#include "evofit/metrics.hpp"
#include "evofit/scoring.hpp"
#include "test_support.hpp"

using namespace evofit;

namespace {

struct Fixture {
  ModelConfig cfg = testkit::tiny_model(true);
  ModelInput in = testkit::toy_input(14, 31, cfg);
  ParamStore params;
  Fixture() {
    params = init_model_params(cfg, 32);
    Rng rng(33);
    // Non-zero transition outputs so the profiles influence the scores.
    for (const auto* block : {&kStructBlock, &kIfBlock})
      for (auto& v : params.at(*block + ".out.W").value.data) v = 0.2 * rng.normal();
  }
};

MutationSet random_mutant(const std::string& wt, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pos(wt.size());
  std::iota(pos.begin(), pos.end(), 0);
  rng.shuffle(pos);
  MutationSet m;
  for (std::size_t i = 0; i < k; ++i) {
    char mt;
    do mt = kAminoAcids[rng.below(20)];
    while (mt == wt[pos[i]]);
    m.substitutions.push_back({static_cast<int>(pos[i] + 1), wt[pos[i]], mt});
  }
  return m;
}

}  // namespace

TEST(LogOdds, WorkedExample) {
  Matrix p(2, kNumCols, 0.2 / 19.0);
  p(0, static_cast<std::size_t>(aa_index('A'))) = 0.7;
  p(0, static_cast<std::size_t>(aa_index('C'))) = 0.1;
  const FitnessScore s = log_odds(p, parse_mutant_string("A1C"), "AD");
  EXPECT_NEAR(s.score, std::log(0.1) - std::log(0.7), 1e-15);
  EXPECT_NEAR(s.score, -1.9459, 1e-4);
  ASSERT_EQ(s.per_site.size(), 1u);
}

TEST(LogOdds, AdditiveOverSitesAndFloored) {
  Rng rng(1);
  const Matrix p = testkit::random_profile(5, rng).matrix;
  const std::string wt = "ACDEF";
  const FitnessScore s = log_odds(p, parse_mutant_string("A1W:E4K"), wt);
  const double a = std::log(p(0, aa_index('W'))) - std::log(p(0, aa_index('A')));
  const double b = std::log(p(3, aa_index('K'))) - std::log(p(3, aa_index('E')));
  EXPECT_DOUBLE_EQ(s.score, a + b);
  Matrix z(1, kNumCols, 0.0);
  z(0, 0) = 1.0;
  EXPECT_NEAR(log_odds(z, parse_mutant_string("A1C"), "A").score, std::log(1e-12), 1e-12);
  EXPECT_THROW(log_odds(p, parse_mutant_string("C1A"), wt), Error);
  EXPECT_THROW(log_odds(p, parse_mutant_string("A9C"), wt), Error);
  EXPECT_THROW(log_odds(p, parse_mutant_string("A1C"), "AC"), Error);
}

TEST(DmsFitness, WorkedExample) {
  EXPECT_NEAR(dms_fitness(10, 5, 10, 10), std::log(0.5), 1e-15);
  EXPECT_EQ(dms_fitness(3, 3, 7, 7), 0.0);
  EXPECT_THROW(dms_fitness(0, 1, 1, 1), Error);
}

TEST(Scoring, EmptyMutationSetScoresZero) {
  Fixture f;
  std::size_t passes = 99;
  const auto s = score_variants(f.params, f.cfg, f.in, {MutationSet{}}, 1, &passes);
  EXPECT_EQ(s[0].score, 0.0);
  EXPECT_TRUE(s[0].per_site.empty());
  EXPECT_EQ(passes, 1u);
}

TEST(Scoring, SwappingWildTypeAndMutantNegates) {
  Fixture f;
  Rng rng(2);
  const std::string wt = f.in.record.sequence;
  for (int trial = 0; trial < 10; ++trial) {
    const MutationSet m = random_mutant(wt, 1 + rng.below(3), rng);
    ProteinRecord mutated = f.in.record;
    MutationSet back;
    for (const auto& s : m.substitutions) {
      mutated.sequence[static_cast<std::size_t>(s.position - 1)] = s.mt;
      back.substitutions.push_back({s.position, s.mt, s.wt});
    }
    const ModelInput min =
        prepare_input(mutated, f.cfg, std::nullopt, f.in.struct_profile, f.in.if_profile);
    const double fwd = score_variants(f.params, f.cfg, f.in, {m})[0].score;
    const double rev = score_variants(f.params, f.cfg, min, {back})[0].score;
    EXPECT_NE(fwd, 0.0);
    EXPECT_EQ(fwd, -rev);
  }
}

TEST(Scoring, OnePassPerPositionSetAndJobIndependent) {
  Fixture f;
  const std::string wt = f.in.record.sequence;
  std::vector<MutationSet> vs;
  for (char mt : std::string("ACDEFG"))
    if (mt != wt[2]) vs.push_back({{{3, wt[2], mt}}});
  for (char mt : std::string("KLM"))
    if (mt != wt[6]) vs.push_back({{{3, wt[2], wt[2] == 'W' ? 'Y' : 'W'}, {7, wt[6], mt}}});
  std::size_t passes = 0;
  const auto a = score_variants(f.params, f.cfg, f.in, vs, 1, &passes);
  EXPECT_EQ(passes, 2u);
  const auto b = score_variants(f.params, f.cfg, f.in, vs, 4);
  for (std::size_t i = 0; i < vs.size(); ++i) {
    EXPECT_EQ(a[i].score, b[i].score);
    // Single masked pass: each score equals log-odds over one table.
    const Matrix p = masked_probabilities(f.params, f.cfg, f.in, vs[i].positions());
    EXPECT_EQ(a[i].score, log_odds(p, vs[i], wt).score);
  }
}

TEST(Standardize, MeanZeroPopulationSd) {
  const auto z = standardize({1.0, 2.0, 3.0, 4.0});
  ASSERT_TRUE(z);
  const double sd = std::sqrt(1.25);
  EXPECT_NEAR((*z)[0], -1.5 / sd, 1e-15);
  EXPECT_NEAR((*z)[3], 1.5 / sd, 1e-15);
  EXPECT_FALSE(standardize({2.0, 2.0, 2.0}));
}

TEST(Ensemble, RankingInvariantUnderPositiveAffineMaps) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(30);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    const double s1 = 0.1 + 5 * rng.uniform(), s2 = 0.1 + 5 * rng.uniform();
    const double t1 = 10 * rng.normal(), t2 = 10 * rng.normal();
    std::vector<double> a2 = a, b2 = b;
    for (auto& v : a2) v = s1 * v + t1;
    for (auto& v : b2) v = s2 * v + t2;
    const auto base = zscore_ensemble(a, b).scores;
    const auto moved = zscore_ensemble(a2, b2).scores;
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(moved[i], base[i], 1e-10);
    EXPECT_EQ(detail::descending_order(moved), detail::descending_order(base));
  }
}

TEST(Ensemble, ZeroVarianceListFallsBackWithWarning) {
  const auto r = zscore_ensemble({1, 2, 3}, {5, 5, 5});
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.scores, *standardize({1, 2, 3}));
  EXPECT_THROW(zscore_ensemble({1, 1}, {2, 2}), Error);
  EXPECT_THROW(zscore_ensemble({1, 2}, {2}), Error);
  EXPECT_THROW(zscore_ensemble({1}, {2}), Error);
}

TEST(ScoreAssay, EnsembleModeNeedsEveryExternalScore) {
  Fixture f;
  const std::string wt = f.in.record.sequence;
  AssayTable t;
  for (int p : {1, 2, 5}) {
    const char mt = wt[static_cast<std::size_t>(p - 1)] == 'A' ? 'C' : 'A';
    AssayRecord r;
    r.mutant = {{{p, wt[static_cast<std::size_t>(p - 1)], mt}}};
    r.mutant_text = to_string(r.mutant);
    t.rows.push_back(r);
  }
  std::map<std::string, double> ext;
  for (std::size_t i = 0; i < t.rows.size(); ++i) ext[t.rows[i].mutant_text] = static_cast<double>(i);
  const AssayScores plain = score_assay(f.params, f.cfg, f.in, t, ScoreMode::evoif);
  const AssayScores ens = score_assay(f.params, f.cfg, f.in, t, ScoreMode::evoif_msa, &ext);
  std::vector<double> lo, ex;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(plain.variants[i].score, plain.variants[i].fitness.score);
    lo.push_back(plain.variants[i].score);
    ex.push_back(ext[t.rows[i].mutant_text]);
  }
  const auto expect = zscore_ensemble(lo, ex).scores;
  for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(ens.variants[i].score, expect[i]);
  EXPECT_THROW(score_assay(f.params, f.cfg, f.in, t, ScoreMode::evoif_msa), Error);
  ext.erase(t.rows[1].mutant_text);
  EXPECT_THROW(score_assay(f.params, f.cfg, f.in, t, ScoreMode::evoif_msa, &ext), Error);
}

TEST(ScoresFile, RoundTripAndErrors) {
  AssayScores s;
  s.variants.push_back({"A1C", FitnessScore{parse_mutant_string("A1C"), -0.25, {-0.25}}, -0.25});
  s.variants.push_back({"A1C:D2E", FitnessScore{parse_mutant_string("A1C:D2E"), 0.1, {0.3, -0.2}}, 0.1});
  const std::string text = write_scores(s);
  EXPECT_EQ(text.substr(0, text.find('\n')), "mutant\tscore\tper_site");
  const auto back = read_scores(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].first, "A1C:D2E");
  EXPECT_EQ(back[1].second, 0.1);
  EXPECT_THROW(read_scores("x\ty\n"), Error);
  EXPECT_THROW(parse_external_scores("mutant\tscore\nA1C\n"), Error);
  EXPECT_THROW(parse_score_mode("msa"), Error);
}
