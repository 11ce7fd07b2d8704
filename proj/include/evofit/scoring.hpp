// Zero-shot fitness: log-odds of mutant vs wild-type residues under one
// masked forward pass per mutated-position set, the DMS enrichment ratio,
// and the z-score ensemble with an external alignment-based predictor.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evofit/model.hpp"
#include "evofit/seqio.hpp"

namespace evofit {

inline constexpr double kScoreProbabilityFloor = 1e-12;

struct FitnessScore {
  MutationSet mutant;
  double score = 0.0;
  std::vector<double> per_site;  // in substitution order; sums to score
};

/// sum_i log P(mt_i at i) - log P(wt_i at i) over an L x 21 probability
/// table computed with every mutated site masked.
inline FitnessScore log_odds(const Matrix& p_final, const MutationSet& muts, std::string_view wt) {
  if (p_final.rows != wt.size()) fail("log_odds: probability table has " + std::to_string(p_final.rows) +
                                      " rows for a sequence of length " + std::to_string(wt.size()));
  check_against(muts, wt);
  FitnessScore out;
  out.mutant = muts;
  for (const auto& s : muts.substitutions) {
    const std::size_t row = static_cast<std::size_t>(s.position - 1);
    const double pm = std::max(p_final(row, static_cast<std::size_t>(aa_index(s.mt))), kScoreProbabilityFloor);
    const double pw = std::max(p_final(row, static_cast<std::size_t>(aa_index(s.wt))), kScoreProbabilityFloor);
    out.per_site.push_back(std::log(pm) - std::log(pw));
  }
  for (double v : out.per_site) out.score += v;
  return out;
}

/// log[(post_mt / pre_mt) / (post_wt / pre_wt)].
inline double dms_fitness(double n_pre_mt, double n_post_mt, double n_pre_wt, double n_post_wt) {
  if (!(n_pre_mt > 0 && n_post_mt > 0 && n_pre_wt > 0 && n_post_wt > 0)) fail("dms_fitness: counts must be positive");
  return std::log((n_post_mt / n_pre_mt) / (n_post_wt / n_pre_wt));
}

/// Mean 0 / sd 1 over the list (population sd). Empty optional if the
/// list has zero variance.
inline std::optional<std::vector<double>> standardize(const std::vector<double>& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (!(sd > 0.0) || !std::isfinite(sd)) return std::nullopt;
  std::vector<double> z;
  for (double v : x) z.push_back((v - mean) / sd);
  return z;
}

struct EnsembleResult {
  std::vector<double> scores;
  std::vector<std::string> warnings;
};

/// Elementwise sum of the two standardized lists. A zero-variance list is
/// dropped with a warning and the other list's z-scores are returned.
inline EnsembleResult zscore_ensemble(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) fail("zscore_ensemble: lists differ in length");
  if (a.size() < 2) fail("zscore_ensemble: need at least 2 scores");
  const auto za = standardize(a);
  const auto zb = standardize(b);
  EnsembleResult r;
  if (!za && !zb) fail("zscore_ensemble: both score lists have zero variance");
  if (!za || !zb) {
    r.warnings.push_back(std::string("zscore_ensemble: ") + (za ? "second" : "first") +
                         " list has zero variance; using the other list alone");
    r.scores = za ? *za : *zb;
    return r;
  }
  for (std::size_t i = 0; i < a.size(); ++i) r.scores.push_back((*za)[i] + (*zb)[i]);
  return r;
}

/// Fused probabilities with the given 1-based positions masked.
inline Matrix masked_probabilities(const ParamStore& params, const ModelConfig& cfg, const ModelInput& in,
                                   const std::vector<int>& positions) {
  std::vector<int> tokens = tokenize(in.record.sequence);
  for (int p : positions) {
    if (p < 1 || static_cast<std::size_t>(p) > tokens.size()) fail("masked_probabilities: position out of range");
    tokens[static_cast<std::size_t>(p - 1)] = kMaskToken;
  }
  Tape tape;
  return forward(tape, params, cfg, in, tokens).p_final.value().to_matrix();
}

/// Log-odds for every variant. Variants with the same mutated-position
/// set share one forward pass; groups run over `jobs` threads.
inline std::vector<FitnessScore> score_variants(const ParamStore& params, const ModelConfig& cfg, const ModelInput& in,
                                                const std::vector<MutationSet>& variants, int jobs = 1,
                                                std::size_t* forward_passes = nullptr) {
  for (const auto& v : variants) check_against(v, in.record.sequence);
  std::map<std::vector<int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < variants.size(); ++i) groups[variants[i].positions()].push_back(i);
  std::vector<const std::pair<const std::vector<int>, std::vector<std::size_t>>*> work;
  for (const auto& g : groups) work.push_back(&g);
  if (forward_passes) *forward_passes = work.size();
  std::vector<FitnessScore> out(variants.size());
  parallel_for(work.size(), jobs, [&](std::size_t w) {
    const auto& [positions, members] = *work[w];
    if (positions.empty()) {
      for (std::size_t i : members) out[i] = FitnessScore{variants[i], 0.0, {}};
      return;
    }
    const Matrix p = masked_probabilities(params, cfg, in, positions);
    for (std::size_t i : members) out[i] = log_odds(p, variants[i], in.record.sequence);
  });
  return out;
}

enum class ScoreMode { evoif, evoif_msa };

inline ScoreMode parse_score_mode(std::string_view s) {
  if (s == "evoif") return ScoreMode::evoif;
  if (s == "evoif_msa") return ScoreMode::evoif_msa;
  fail("unknown scoring mode '" + std::string(s) + "' (expected evoif or evoif_msa)");
}

struct ScoredVariant {
  std::string mutant_text;
  FitnessScore fitness;
  double score = 0.0;  // reported score: log-odds, or the z-score ensemble
};

struct AssayScores {
  std::vector<ScoredVariant> variants;
  std::size_t forward_passes = 0;
  std::vector<std::string> warnings;
};

/// External per-variant scores: TSV with header "mutant\tscore".
inline std::map<std::string, double> parse_external_scores(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || split(lines[0], '\t') != std::vector<std::string>{"mutant", "score"})
    fail("external scores: header must be mutant\\tscore");
  std::map<std::string, double> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cols = split(lines[ln], '\t');
    const std::string where = "external scores row " + std::to_string(ln);
    if (cols.size() != 2) fail(where + ": expected 2 columns");
    out[cols[0]] = parse_double(cols[1], where);
  }
  return out;
}

inline AssayScores score_assay(const ParamStore& params, const ModelConfig& cfg, const ModelInput& in,
                               const AssayTable& assay, ScoreMode mode,
                               const std::map<std::string, double>* external = nullptr, int jobs = 1) {
  std::vector<MutationSet> variants;
  for (const auto& r : assay.rows) variants.push_back(r.mutant);
  AssayScores out;
  const auto fitness = score_variants(params, cfg, in, variants, jobs, &out.forward_passes);
  for (std::size_t i = 0; i < fitness.size(); ++i)
    out.variants.push_back({assay.rows[i].mutant_text, fitness[i], fitness[i].score});
  if (mode == ScoreMode::evoif_msa) {
    if (!external) fail("score_assay: evoif_msa mode requires external scores");
    std::vector<double> a, b;
    for (const auto& v : out.variants) {
      auto it = external->find(v.mutant_text);
      if (it == external->end()) fail("score_assay: no external score for variant '" + v.mutant_text + "'");
      a.push_back(v.fitness.score);
      b.push_back(it->second);
    }
    EnsembleResult ens = zscore_ensemble(a, b);
    out.warnings = ens.warnings;
    for (std::size_t i = 0; i < out.variants.size(); ++i) out.variants[i].score = ens.scores[i];
  }
  return out;
}

/// "mutant\tscore\tper_site" header, then one row per variant with its
/// per-site log-odds terms as trailing columns.
inline std::string write_scores(const AssayScores& s) {
  std::string out = "mutant\tscore\tper_site\n";
  for (const auto& v : s.variants) {
    out += v.mutant_text + "\t" + format_double(v.score);
    for (double x : v.fitness.per_site) out += "\t" + format_double(x);
    out += "\n";
  }
  return out;
}

/// Reads the mutant and score columns of a scores TSV.
inline std::vector<std::pair<std::string, double>> read_scores(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0].rfind("mutant\tscore", 0) != 0) fail("scores file: bad header");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto cols = split(lines[ln], '\t');
    if (cols.size() < 2) fail("scores file row " + std::to_string(ln) + ": expected at least 2 columns");
    out.emplace_back(cols[0], parse_double(cols[1], "scores file row " + std::to_string(ln)));
  }
  return out;
}

}  // namespace evofit
