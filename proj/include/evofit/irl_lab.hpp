// An exactly enumerable sequence "evolution" model for checking that
// masked-model log-odds recover reward differences.
//
// Sequences of length L over a toy alphabet of size A are Boltzmann
// distributed in a reward made of per-position weights plus optional
// adjacent-pair couplings. Demonstrations are i.i.d. draws from that
// distribution. A masked conditional model is fit to the demonstrations
// and its single-mutant log-odds are compared with the exact reward
// differences.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evofit/common.hpp"
#include "evofit/metrics.hpp"
#include "evofit/mlm_train.hpp"
#include "evofit/model.hpp"
#include "evofit/profile.hpp"
#include "evofit/scoring.hpp"

namespace evofit {

inline constexpr std::size_t kMaxToyStates = 300000;

/// Reward parameters; temperature is folded in by the caller.
struct RewardModel {
  std::size_t alphabet = 4;
  std::size_t length = 6;
  Matrix weights;                  // L x A
  std::vector<Matrix> couplings;   // empty, or L-1 matrices of A x A (pos i, i+1)

  double operator()(const std::vector<int>& s) const {
    double r = 0.0;
    for (std::size_t i = 0; i < length; ++i) r += weights(i, static_cast<std::size_t>(s[i]));
    if (!couplings.empty())
      for (std::size_t i = 0; i + 1 < length; ++i)
        r += couplings[i](static_cast<std::size_t>(s[i]), static_cast<std::size_t>(s[i + 1]));
    return r;
  }
};

struct ToyMDP {
  RewardModel reward;  // untempered
  double temperature = 1.0;

  std::size_t num_states() const;
  /// The reward the expert actually follows: R / temperature.
  RewardModel effective_reward() const {
    RewardModel r = reward;
    for (auto& v : r.weights.data) v /= temperature;
    for (auto& m : r.couplings)
      for (auto& v : m.data) v /= temperature;
    return r;
  }
};

inline std::size_t state_count(std::size_t alphabet, std::size_t length) {
  if (alphabet < 2 || alphabet > 6) fail("toy MDP: alphabet size must be in [2, 6]");
  if (length < 1 || length > 8) fail("toy MDP: length must be in [1, 8]");
  std::size_t n = 1;
  for (std::size_t i = 0; i < length; ++i) n *= alphabet;
  if (n > kMaxToyStates)
    fail("toy MDP: " + std::to_string(n) + " states exceed the enumeration bound of " + std::to_string(kMaxToyStates));
  return n;
}

inline std::size_t ToyMDP::num_states() const { return state_count(reward.alphabet, reward.length); }

inline void validate(const RewardModel& r) {
  state_count(r.alphabet, r.length);
  if (r.weights.rows != r.length || r.weights.cols != r.alphabet) fail("reward: weights must be L x A");
  if (!r.couplings.empty()) {
    if (r.couplings.size() + 1 != r.length) fail("reward: need L-1 coupling matrices");
    for (const auto& m : r.couplings)
      if (m.rows != r.alphabet || m.cols != r.alphabet) fail("reward: couplings must be A x A");
  }
  for (double v : r.weights.data)
    if (!std::isfinite(v)) fail("reward: non-finite weight");
  for (const auto& m : r.couplings)
    for (double v : m.data)
      if (!std::isfinite(v)) fail("reward: non-finite coupling");
}

/// Position 0 is the most significant base-A digit.
inline std::vector<int> decode_state(std::size_t index, std::size_t alphabet, std::size_t length) {
  std::vector<int> s(length);
  for (std::size_t i = length; i-- > 0;) {
    s[i] = static_cast<int>(index % alphabet);
    index /= alphabet;
  }
  return s;
}

inline std::size_t encode_state(const std::vector<int>& s, std::size_t alphabet) {
  std::size_t idx = 0;
  for (int v : s) idx = idx * alphabet + static_cast<std::size_t>(v);
  return idx;
}

struct BoltzmannTable {
  std::vector<double> prob;  // indexed by encode_state
  double log_z = 0.0;
};

/// P(s) = exp(R(s)) / Z by full enumeration, log-sum-exp with a max shift.
inline BoltzmannTable boltzmann_distribution(const RewardModel& r) {
  validate(r);
  const std::size_t n = state_count(r.alphabet, r.length);
  std::vector<double> rew(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    rew[k] = r(decode_state(k, r.alphabet, r.length));
    mx = std::max(mx, rew[k]);
  }
  double z = 0.0;
  for (double v : rew) z += std::exp(v - mx);
  BoltzmannTable t;
  t.log_z = mx + std::log(z);
  t.prob.resize(n);
  for (std::size_t k = 0; k < n; ++k) t.prob[k] = std::exp(rew[k] - t.log_z);
  return t;
}

inline BoltzmannTable boltzmann_distribution(const ToyMDP& mdp) { return boltzmann_distribution(mdp.effective_reward()); }

/// Inverse-CDF sampling from the exact table.
inline std::vector<std::vector<int>> sample_demonstrations(const ToyMDP& mdp, std::size_t n, std::uint64_t seed) {
  if (n == 0) fail("sample_demonstrations: n must be positive");
  const BoltzmannTable t = boltzmann_distribution(mdp);
  std::vector<double> cdf(t.prob.size());
  std::partial_sum(t.prob.begin(), t.prob.end(), cdf.begin());
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * cdf.back();
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    k = std::min(k, cdf.size() - 1);
    while (t.prob[k] == 0.0 && k > 0) --k;  // never land on a zero-mass state
    out.push_back(decode_state(k, mdp.reward.alphabet, mdp.reward.length));
  }
  return out;
}

/// (1/|D|) sum R(s) - log Z.
inline double irl_log_likelihood(const RewardModel& candidate, const std::vector<std::vector<int>>& demos) {
  if (demos.empty()) fail("irl_log_likelihood: no demonstrations");
  const BoltzmannTable t = boltzmann_distribution(candidate);
  double mean_r = 0.0;
  for (const auto& s : demos) mean_r += candidate(s);
  return mean_r / static_cast<double>(demos.size()) - t.log_z;
}

/// d L_IRL / d weights(i, a) = empirical frequency - model marginal.
inline Matrix irl_weight_gradient(const RewardModel& candidate, const std::vector<std::vector<int>>& demos) {
  const BoltzmannTable t = boltzmann_distribution(candidate);
  Matrix g(candidate.length, candidate.alphabet);
  for (const auto& s : demos)
    for (std::size_t i = 0; i < candidate.length; ++i) g(i, static_cast<std::size_t>(s[i])) += 1.0 / static_cast<double>(demos.size());
  for (std::size_t k = 0; k < t.prob.size(); ++k) {
    const auto s = decode_state(k, candidate.alphabet, candidate.length);
    for (std::size_t i = 0; i < candidate.length; ++i) g(i, static_cast<std::size_t>(s[i])) -= t.prob[k];
  }
  return g;
}

/// Exact masked conditional P(s_i = a | s_{-i}) under a reward model.
inline std::vector<double> exact_conditional(const RewardModel& r, const std::vector<int>& s, std::size_t i) {
  std::vector<double> logits(r.alphabet);
  for (std::size_t a = 0; a < r.alphabet; ++a) {
    double v = r.weights(i, a);
    if (!r.couplings.empty()) {
      if (i > 0) v += r.couplings[i - 1](static_cast<std::size_t>(s[i - 1]), a);
      if (i + 1 < r.length) v += r.couplings[i](a, static_cast<std::size_t>(s[i + 1]));
    }
    logits[a] = v;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& v : logits) z += (v = std::exp(v - mx));
  for (auto& v : logits) v /= z;
  return logits;
}

/// Mean masked-conditional log-likelihood of the demonstrations under the
/// candidate (the MLM objective with one site masked at a time).
inline double mlm_pseudo_likelihood(const RewardModel& candidate, const std::vector<std::vector<int>>& demos) {
  double total = 0.0;
  for (const auto& s : demos)
    for (std::size_t i = 0; i < candidate.length; ++i)
      total += std::log(exact_conditional(candidate, s, i)[static_cast<std::size_t>(s[i])]);
  return total / static_cast<double>(demos.size() * candidate.length);
}

// ---------------------------------------------------------------- conditional models

/// A fitted masked conditional model: conditional(s, i) returns the
/// distribution of site i given the rest of s.
using ConditionalFn = std::function<std::vector<double>(const std::vector<int>&, std::size_t)>;

/// Counts of site i given its two neighbours, with a symmetric
/// pseudocount. Exact in the large-data limit for adjacent couplings.
struct CountConditionalModel {
  std::size_t alphabet = 4;
  std::size_t length = 6;
  double pseudocount = 0.5;
  std::vector<double> counts;  // [i][left][right][a]; boundary uses index A

  std::size_t slot(std::size_t i, std::size_t left, std::size_t right, std::size_t a) const {
    const std::size_t B = alphabet + 1;
    return ((i * B + left) * B + right) * alphabet + a;
  }

  void fit(const std::vector<std::vector<int>>& demos) {
    const std::size_t B = alphabet + 1;
    counts.assign(length * B * B * alphabet, 0.0);
    for (const auto& s : demos)
      for (std::size_t i = 0; i < length; ++i) {
        const std::size_t l = i == 0 ? alphabet : static_cast<std::size_t>(s[i - 1]);
        const std::size_t r = i + 1 == length ? alphabet : static_cast<std::size_t>(s[i + 1]);
        counts[slot(i, l, r, static_cast<std::size_t>(s[i]))] += 1.0;
      }
  }

  std::vector<double> conditional(const std::vector<int>& s, std::size_t i) const {
    const std::size_t l = i == 0 ? alphabet : static_cast<std::size_t>(s[i - 1]);
    const std::size_t r = i + 1 == length ? alphabet : static_cast<std::size_t>(s[i + 1]);
    std::vector<double> p(alphabet);
    double z = 0.0;
    for (std::size_t a = 0; a < alphabet; ++a) z += (p[a] = counts[slot(i, l, r, a)] + pseudocount);
    for (auto& v : p) v /= z;
    return p;
  }
};

/// Reward difference of a point mutant from masked conditionals:
/// log P(mt | rest) - log P(wt | rest).
inline double delta_reward(const ConditionalFn& model, const std::vector<int>& wt, std::size_t i, int mt) {
  const auto p = model(wt, i);
  return std::log(p[static_cast<std::size_t>(mt)]) - std::log(p[static_cast<std::size_t>(wt[i])]);
}

// ---------------------------------------------------------------- experiment

enum class ToyConditional { count, fusion };

struct IrlExperimentConfig {
  std::size_t alphabet = 4;
  std::size_t length = 6;
  double temperature = 1.0;
  double weight_scale = 1.0;
  double coupling_scale = 0.0;  // 0: independent positions
  std::size_t n_demos = 10000;
  std::uint64_t seed = 0;
  ToyConditional model = ToyConditional::count;
  std::size_t n_candidates = 20;
  double candidate_noise = 0.5;
  // Fusion-stack route.
  std::size_t fusion_train_demos = 4000;
  std::size_t fusion_epochs = 40;
  std::size_t fusion_batch = 32;
  double fusion_lr = 3e-3;
  std::size_t fusion_d_model = 16;
  std::size_t fusion_ffn = 32;
};

inline IrlExperimentConfig irl_config_from(const std::map<std::string, std::string>& kv, IrlExperimentConfig c = {}) {
  auto size = [&](const char* key, std::size_t& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      const long v = parse_long(it->second, key);
      if (v < 0) fail(std::string("'") + key + "' must be non-negative");
      out = static_cast<std::size_t>(v);
    }
  };
  auto real = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) out = parse_double(it->second, key);
  };
  size("alphabet", c.alphabet);
  size("length", c.length);
  real("temperature", c.temperature);
  real("weight_scale", c.weight_scale);
  real("coupling_scale", c.coupling_scale);
  size("n_demos", c.n_demos);
  size("n_candidates", c.n_candidates);
  real("candidate_noise", c.candidate_noise);
  size("fusion_train_demos", c.fusion_train_demos);
  size("fusion_epochs", c.fusion_epochs);
  size("fusion_batch", c.fusion_batch);
  real("fusion_lr", c.fusion_lr);
  size("fusion_d_model", c.fusion_d_model);
  size("fusion_ffn", c.fusion_ffn);
  if (auto it = kv.find("seed"); it != kv.end()) c.seed = static_cast<std::uint64_t>(parse_long(it->second, "seed"));
  if (auto it = kv.find("model"); it != kv.end()) {
    if (it->second == "count") c.model = ToyConditional::count;
    else if (it->second == "fusion") c.model = ToyConditional::fusion;
    else fail("'model' must be count or fusion");
  }
  if (!(c.temperature > 0.0)) fail("'temperature' must be positive");
  return c;
}

inline ToyMDP make_toy_mdp(const IrlExperimentConfig& c, Rng& rng) {
  state_count(c.alphabet, c.length);
  ToyMDP mdp;
  mdp.temperature = c.temperature;
  mdp.reward.alphabet = c.alphabet;
  mdp.reward.length = c.length;
  mdp.reward.weights = Matrix(c.length, c.alphabet);
  for (auto& v : mdp.reward.weights.data) v = c.weight_scale * rng.normal();
  if (c.coupling_scale != 0.0) {
    mdp.reward.couplings.assign(c.length - 1, Matrix(c.alphabet, c.alphabet));
    for (auto& m : mdp.reward.couplings)
      for (auto& v : m.data) v = c.coupling_scale * rng.normal();
  }
  return mdp;
}

/// Toy letters map onto the first A amino acids so the fused model and the
/// log-odds scorer can run on demonstrations unchanged.
inline std::string toy_to_protein(const std::vector<int>& s) {
  std::string out;
  for (int v : s) out.push_back(kAminoAcids[static_cast<std::size_t>(v)]);
  return out;
}

/// An ideal alpha-helix CA trace (3.8 A rise between neighbours) with
/// N and C placed on fixed offsets; used where only geometry is needed.
inline std::vector<ResidueFrame> helix_backbone(std::size_t length) {
  std::vector<ResidueFrame> bb;
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) * 100.0 * M_PI / 180.0;
    const Vec3 ca{2.3 * std::cos(t), 2.3 * std::sin(t), 1.5 * static_cast<double>(i)};
    bb.push_back({{ca[0] - 0.6, ca[1] + 1.2, ca[2] - 0.4}, ca, {ca[0] + 1.1, ca[1] - 0.7, ca[2] + 0.5}});
  }
  return bb;
}

/// Small encoder/transition sizes for the fused model on toy sequences.
inline ModelConfig toy_fusion_model_config(const IrlExperimentConfig& e = {}) {
  ModelConfig c;
  c.encoder.num_layers = 1;
  c.encoder.scalar_dim = 16;
  c.encoder.vector_dim = 4;
  c.encoder.k_neighbors = 5;
  c.encoder.num_rbf = 8;
  c.fusion.transition = {e.fusion_d_model, 2, e.fusion_ffn};
  c.use_struct_profile = true;
  c.use_if_profile = false;
  return c;
}

struct FusionConditional {
  ModelConfig cfg;
  ParamStore params;
  Profile demo_profile;
  std::vector<ResidueFrame> backbone;

  ModelInput input_for(const std::vector<int>& s) const {
    ProteinRecord rec{"toy", toy_to_protein(s), backbone};
    return prepare_input(rec, cfg, std::nullopt, demo_profile, std::nullopt);
  }

  /// Full 21-column fused distribution with site i masked.
  Matrix masked_table(const std::vector<int>& s, std::size_t i) const {
    return masked_probabilities(params, cfg, input_for(s), {static_cast<int>(i + 1)});
  }

  /// Restricted to the toy alphabet and renormalized.
  std::vector<double> conditional(const std::vector<int>& s, std::size_t i, std::size_t alphabet) const {
    const Matrix p = masked_table(s, i);
    std::vector<double> out(alphabet);
    double z = 0.0;
    for (std::size_t a = 0; a < alphabet; ++a) z += (out[a] = p(i, a));
    for (auto& v : out) v /= z;
    return out;
  }
};

/// Trains the fused model on demonstrations, with the demonstrations' own
/// column profile as the structure-profile input (homologs as context).
inline FusionConditional fit_fusion_conditional(const IrlExperimentConfig& c,
                                                const std::vector<std::vector<int>>& demos, std::uint64_t seed) {
  FusionConditional f;
  f.cfg = toy_fusion_model_config(c);
  f.backbone = helix_backbone(c.length);
  Alignment aln;
  aln.query = toy_to_protein(demos.front());
  for (const auto& s : demos) aln.rows.push_back(toy_to_protein(s));
  aln.rows.front() = aln.query;
  f.demo_profile = build_sequence_profile(aln, {1.0, false}).profile;

  std::vector<ModelInput> data;
  // demos[0] is the scored reference; keep it out of training so its own
  // residues are not memorized.
  const std::size_t n = std::min(c.fusion_train_demos + 1, demos.size());
  for (std::size_t k = 1; k < n; ++k) data.push_back(f.input_for(demos[k]));
  if (data.empty()) fail("fusion conditional: need at least 2 demonstrations");
  TrainConfig tc;
  tc.epochs = c.fusion_epochs;
  tc.seed = seed;
  tc.batch_size = std::max<std::size_t>(1, c.fusion_batch);
  tc.optimizer.lr_muon = c.fusion_lr;
  tc.optimizer.lr_adamw = c.fusion_lr;
  tc.optimizer.weight_decay = 0.0;
  f.params = train(data, f.cfg, tc, init_model_params(f.cfg, seed ^ 0x5eedULL)).params;
  return f;
}

struct IrlReport {
  double spearman_logodds_vs_delta_r = kUndefined;
  double spearman_mlm_vs_irl = kUndefined;
  std::size_t n_mutants = 0;
  std::vector<int> reference;
  std::vector<double> log_odds;
  std::vector<double> delta_r;
  // Largest |log_odds via the scorer - delta_reward via conditionals|.
  double linkage_max_abs_diff = 0.0;
};

inline IrlReport mlm_as_irl_experiment(const IrlExperimentConfig& c) {
  Rng rng(c.seed);
  const ToyMDP mdp = make_toy_mdp(c, rng);
  const auto demos = sample_demonstrations(mdp, c.n_demos, rng.next());
  const RewardModel truth = mdp.effective_reward();

  IrlReport rep;
  rep.reference = demos.front();
  ConditionalFn model;
  CountConditionalModel counts{c.alphabet, c.length, 0.5, {}};
  std::optional<FusionConditional> fusion;
  if (c.model == ToyConditional::count) {
    counts.fit(demos);
    model = [&counts](const std::vector<int>& s, std::size_t i) { return counts.conditional(s, i); };
  } else {
    fusion = fit_fusion_conditional(c, demos, rng.next());
    model = [&fusion, &c](const std::vector<int>& s, std::size_t i) { return fusion->conditional(s, i, c.alphabet); };
  }

  const std::string wt = toy_to_protein(rep.reference);
  for (std::size_t i = 0; i < c.length; ++i) {
    // The scorer path: the same conditionals laid out as an L x 21 table.
    const std::vector<double> p = model(rep.reference, i);
    Matrix table(c.length, kNumCols, 0.0);
    for (std::size_t a = 0; a < c.alphabet; ++a) table(i, a) = p[a];
    for (std::size_t a = 0; a < c.alphabet; ++a) {
      if (static_cast<int>(a) == rep.reference[i]) continue;
      std::vector<int> mt = rep.reference;
      mt[i] = static_cast<int>(a);
      const double dr_model = delta_reward(model, rep.reference, i, static_cast<int>(a));
      MutationSet m{{{static_cast<int>(i + 1), wt[i], kAminoAcids[a]}}};
      const double lo = log_odds(table, m, wt).score;
      rep.linkage_max_abs_diff = std::max(rep.linkage_max_abs_diff, std::abs(lo - dr_model));
      rep.log_odds.push_back(lo);
      rep.delta_r.push_back(truth(mt) - truth(rep.reference));
    }
  }
  rep.n_mutants = rep.log_odds.size();
  rep.spearman_logodds_vs_delta_r = spearman(rep.log_odds, rep.delta_r);

  std::vector<double> irl_like, mlm_like;
  for (std::size_t k = 0; k < c.n_candidates; ++k) {
    RewardModel cand = truth;
    const double noise = c.candidate_noise * static_cast<double>(k) / static_cast<double>(std::max<std::size_t>(1, c.n_candidates - 1));
    for (auto& v : cand.weights.data) v += noise * rng.normal();
    for (auto& m : cand.couplings)
      for (auto& v : m.data) v += noise * rng.normal();
    irl_like.push_back(irl_log_likelihood(cand, demos));
    mlm_like.push_back(mlm_pseudo_likelihood(cand, demos));
  }
  if (irl_like.size() >= 2) rep.spearman_mlm_vs_irl = spearman(mlm_like, irl_like);
  return rep;
}

inline std::string irl_report_json(const IrlReport& r, const IrlExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["config"] = {{"alphabet", c.alphabet},
                 {"length", c.length},
                 {"temperature", c.temperature},
                 {"weight_scale", c.weight_scale},
                 {"coupling_scale", c.coupling_scale},
                 {"n_demos", c.n_demos},
                 {"seed", c.seed},
                 {"model", c.model == ToyConditional::count ? "count" : "fusion"},
                 {"n_candidates", c.n_candidates},
                 {"candidate_noise", c.candidate_noise}};
  if (c.model == ToyConditional::fusion)
    j["config"].update({{"fusion_train_demos", c.fusion_train_demos},
                        {"fusion_epochs", c.fusion_epochs},
                        {"fusion_batch", c.fusion_batch},
                        {"fusion_lr", c.fusion_lr},
                        {"fusion_d_model", c.fusion_d_model},
                        {"fusion_ffn", c.fusion_ffn}});
  j["spearman_logodds_vs_delta_r"] = json_number(r.spearman_logodds_vs_delta_r);
  j["spearman_mlm_vs_irl"] = json_number(r.spearman_mlm_vs_irl);
  j["n_mutants"] = r.n_mutants;
  j["linkage_max_abs_diff"] = r.linkage_max_abs_diff;
  j["reference"] = r.reference;
  j["log_odds"] = r.log_odds;
  j["delta_r"] = r.delta_r;
  return j.dump(2) + "\n";
}

}  // namespace evofit
