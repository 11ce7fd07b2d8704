// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Tolerances, seeds and runtime budgets are fixed below. EVOFIT_SEED is
// cleared so the config seeds apply.
#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "evofit/irl_lab.hpp"
#include "evofit/pipeline.hpp"
#include "oracles.hpp"
#include "svd_support.hpp"
#include "test_support.hpp"

using namespace evofit;
using namespace evofit::testkit;

namespace {

// Collects violated conditions and a few headline numbers for the report line.
struct Check {
  std::vector<std::string> failures;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  template <class T>
  void note(const std::string& key, const T& v) {
    detail << key << "=" << v << " ";
  }
};

double worst(double a, double b) { return std::isnan(b) ? b : std::max(a, b); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------- profile

void profile_oracle(Check& c) {
  Rng rng(12);
  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8), L = 1 + rng.below(12);
    const Alignment a = random_alignment(rng, n, L, rng.uniform());
    const double cut = 0.3 + 0.7 * rng.uniform();
    mismatches += !(build_sequence_profile(a, {cut, false}).profile.matrix == oracle_profile(a.rows, cut));
  }
  c.note("alignments", 200);
  c.note("mismatches", mismatches);
  c.require(mismatches == 0, "profile differs from brute-force counts");
}

// ---------------------------------------------------------------- SE(3)

struct Encoded {
  Tensor probs;
  std::vector<Tensor> scalars, vectors;
};

Encoded run_encoder(const ProteinRecord& rec, const ParamStore& params, const EncoderConfig& cfg) {
  ResidueGraph g = build_graph(rec, cfg);
  init_nodes(g, ToyEmbedder{cfg.scalar_dim, 7}.embed(tokenize(rec.sequence)), cfg);
  Tape t;
  EncoderOutput out = encode(t, g, params, cfg);
  Encoded e{out.probs.value(), {}, {}};
  for (const auto& l : out.layers) {
    e.scalars.push_back(l.s.value());
    e.vectors.push_back(l.v.value());
  }
  return e;
}

void se3_suite(Check& c) {
  EncoderConfig cfg;
  cfg.num_layers = 3;
  cfg.scalar_dim = 12;
  cfg.vector_dim = 4;
  cfg.k_neighbors = 6;
  cfg.num_rbf = 8;
  const ProteinRecord rec = toy::make_protein("se3", 30, 2, 5).record;
  Rng rng(40);
  ParamStore params;
  add_encoder_params(params, cfg, rng);
  const Encoded base = run_encoder(rec, params, cfg);
  double inv = 0.0, eqv = 0.0, vec_scale = 0.0;
  for (const auto& v : base.vectors)
    for (double x : v.data) vec_scale = std::max(vec_scale, std::abs(x));
  for (int trial = 0; trial < 20; ++trial) {
    const auto R = random_rotation(rng);
    const Vec3 shift{20 * rng.normal(), 20 * rng.normal(), 20 * rng.normal()};
    const Encoded m = run_encoder(transformed(rec, R, shift), params, cfg);
    for (std::size_t k = 0; k < base.probs.numel(); ++k) inv = worst(inv, std::abs(m.probs.data[k] - base.probs.data[k]));
    for (std::size_t l = 0; l < base.vectors.size(); ++l) {
      for (std::size_t k = 0; k < base.scalars[l].numel(); ++k)
        inv = worst(inv, std::abs(m.scalars[l].data[k] - base.scalars[l].data[k]));
      const Tensor& V = base.vectors[l];
      for (std::size_t i = 0; i < rec.length(); ++i)
        for (std::size_t ch = 0; ch < V.cols(); ++ch) {
          const Vec3 rv = apply(R, {V(3 * i, ch), V(3 * i + 1, ch), V(3 * i + 2, ch)});
          for (std::size_t d = 0; d < 3; ++d) eqv = worst(eqv, std::abs(m.vectors[l](3 * i + d, ch) - rv[d]));
        }
    }
  }
  c.note("transforms", 20);
  c.note("invariance_err", fmt(inv));
  c.note("equivariance_err", fmt(eqv));
  c.require(vec_scale > 1e-3, "vector features are trivially zero");
  c.require(inv < 1e-6, "invariance error >= 1e-6");
  c.require(eqv < 1e-6, "equivariance error >= 1e-6");
}

// ---------------------------------------------------------------- gradients

void wake_up(ParamStore& params, const std::string& prefix, Rng& rng) {
  for (const char* n : {".out.W", ".out.b"})
    for (auto& v : params.at(prefix + n).value.data) v = 0.3 * rng.normal();
}

void gradient_gate(Check& c) {
  const ModelConfig cfg = tiny_model(true);
  double fused = 0.0;
  for (int fixture = 0; fixture < 3; ++fixture) {
    const ModelInput in = toy_input(7 + fixture, 200 + fixture, cfg);
    ParamStore params = init_model_params(cfg, 300 + fixture);
    Rng rng(400 + fixture);
    wake_up(params, kStructBlock, rng);
    wake_up(params, kIfBlock, rng);
    const MaskPlan plan = make_mask_plan(in.record.length(), 0.3, 500 + fixture);
    fused = worst(fused, grad_check([&](Tape& t, const ParamStore& p) { return mlm_loss(t, p, cfg, in, plan); }, params));
  }
  double prim = 0.0;
  std::string worst_name;
  std::size_t n_prims = 0;
  for (const auto& pc : primitive_cases()) {
    ++n_prims;
    Rng rng(std::hash<std::string>{}(pc.name) % 1000);
    for (int trial = 0; trial < 10; ++trial) {
      const ParamStore s = pc.make(rng);
      const std::uint64_t wseed = rng.next();
      const double e = grad_check([&](Tape& t, const ParamStore& p) { return contract(t, pc.op(t, p), wseed); }, s);
      if (!(e <= prim)) {
        prim = e;
        worst_name = pc.name;
      }
    }
  }
  c.note("fused_rel_err", fmt(fused));
  c.note("primitives", n_prims);
  c.note("primitive_rel_err", fmt(prim) + "(" + worst_name + ")");
  c.require(fused < 1e-4, "fused MLM gradient error >= 1e-4");
  c.require(prim < 1e-6, "primitive gradient error >= 1e-6");
}

// ---------------------------------------------------------------- ablation

// The bundled toy config with paths pinned to `dir` and optional extra keys.
fs::path toy_train_config(const fs::path& dir, const std::string& extra) {
  std::string text;
  for (const auto& line : split_lines(read_file(toy_dir() / "train.cfg"))) {
    const std::string_view l = trim(line);
    if (l.rfind("dataset", 0) == 0 || l.rfind("heldout", 0) == 0) continue;
    text += line + "\n";
  }
  text += "dataset = " + (toy_dir() / "train.tsv").string() + "\n";
  text += "heldout = " + (toy_dir() / "heldout.tsv").string() + "\n";
  text += extra;
  write_file_atomic(dir / "train.cfg", text);
  return dir / "train.cfg";
}

void ablation(Check& c) {
  const ModelConfig with = tiny_model(true);
  int differing = 0;
  for (int fixture = 0; fixture < 3; ++fixture) {
    const ModelInput in = toy_input(9 + 3 * fixture, 100 + fixture, with);
    const std::vector<int> tok = tokenize(in.record.sequence);
    Tensor reference;
    for (int mask = 0; mask < 4; ++mask) {
      ModelConfig m = with;
      m.use_struct_profile = mask & 1;
      m.use_if_profile = mask & 2;
      Tape t;
      const Tensor out = forward(t, init_model_params(m, 77), m, in, tok).p_final.value();
      if (mask == 0) reference = out;
      else differing += !(out == reference);
    }
  }
  c.require(differing == 0, "profile toggles changed P_final at zero init");

  const fs::path both_dir = scratch_dir("acc_ablation_both");
  const fs::path none_dir = scratch_dir("acc_ablation_none");
  const TrainOutcome both = cmd_train(toy_train_config(both_dir, ""), std::nullopt, 1);
  const TrainOutcome none =
      cmd_train(toy_train_config(none_dir, "use_struct_profile = false\nuse_if_profile = false\n"), std::nullopt, 1);
  const double lb = both.heldout_loss.value_or(NAN), ln = none.heldout_loss.value_or(NAN);
  c.note("epochs", both.result.epoch_loss.size());
  c.note("heldout_both", fmt(lb));
  c.note("heldout_none", fmt(ln));
  c.require(both.result.epoch_loss.size() == 200, "toy config is not 200 epochs");
  c.require(lb <= ln, "held-out loss with profiles exceeds the no-profile loss");
}

// ---------------------------------------------------------------- masking

void masking(Check& c) {
  double counts[3] = {0, 0, 0};
  int bad_count = 0;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const MaskPlan p = make_mask_plan(100, 0.15, s);
    bad_count += p.positions.size() != 15;
    for (auto a : p.actions) counts[static_cast<int>(a)] += 1;
  }
  const double total = counts[0] + counts[1] + counts[2];
  const double expect[3] = {0.8, 0.1, 0.1};
  double chi2 = 0.0, dev = 0.0;
  for (int a = 0; a < 3; ++a) {
    dev = std::max(dev, std::abs(counts[a] / total - expect[a]));
    chi2 += (counts[a] - expect[a] * total) * (counts[a] - expect[a] * total) / (expect[a] * total);
  }
  const double p = std::exp(-chi2 / 2.0);  // chi-square survival, 2 dof
  c.note("plans", 10000);
  c.note("mask/swap/keep", fmt(counts[0] / total) + "/" + fmt(counts[1] / total) + "/" + fmt(counts[2] / total));
  c.note("chi2_p", fmt(p));
  c.require(bad_count == 0, "a plan did not select exactly 15 of 100 sites");
  c.require(dev <= 0.01, "action frequency off by more than 1%");
  c.require(p > 0.01, "chi-square p <= 0.01");
}

// ---------------------------------------------------------------- Muon

void muon(Check& c) {
  Rng rng(11);
  double lo = 1e9, hi = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd s = singular_values(newton_schulz(random_gaussian(32, 16, rng), 5, 2));
    lo = std::min(lo, s.minCoeff());
    hi = std::max(hi, s.maxCoeff());
  }
  double fixed = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd g(32, 16);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const Eigen::MatrixXd q = Eigen::JacobiSVD<Eigen::MatrixXd>(g, Eigen::ComputeThinU | Eigen::ComputeThinV).matrixU();
    Matrix m(32, 16);
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 16; ++j) m(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    fixed = worst(fixed, max_abs_diff(newton_schulz(m, 5, 2), m));
  }
  c.note("sv_range", "[" + fmt(lo) + "," + fmt(hi) + "]");
  c.note("fixed_point_err", fmt(fixed));
  c.require(lo >= 0.7 && hi <= 1.3, "singular values outside [0.7, 1.3]");
  c.require(fixed <= 1e-3, "orthogonal input moved by more than 1e-3");
}

// ---------------------------------------------------------------- metrics

double pair_count_auc(const std::vector<double>& pred, const std::vector<int>& labels) {
  double good = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < pred.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        pairs += 1.0;
        good += pred[i] > pred[j] ? 1.0 : pred[i] == pred[j] ? 0.5 : 0.0;
      }
  return good / pairs;
}

void metric_oracles(Check& c) {
  Rng rng(1);
  double auc_err = 0.0;
  std::size_t labelings = 0;
  for (std::size_t n = 2; n <= 8; ++n)
    for (int rep = 0; rep < 6; ++rep) {
      std::vector<double> pred(n);
      for (auto& x : pred) x = rep % 2 ? static_cast<double>(rng.below(4)) : rng.normal();
      for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
        auc_err = worst(auc_err, std::abs(auc(pred, labels) - pair_count_auc(pred, labels)));
        ++labelings;
      }
    }
  double hand = 0.0;
  auto hand_check = [&](double got, double want) { hand = worst(hand, std::abs(got - want)); };
  hand_check(spearman({1, 2, 3, 4}, {1, 3, 2, 4}), 0.8);
  hand_check(spearman({5, 5, 9}, {1, 2, 3}), std::sqrt(3.0) / 2.0);
  hand_check(mcc({8, 7, 6, 5, 4, 3, 2, 1}, {1, 1, 1, 0, 1, 0, 0, 0}), 0.5);
  hand_check(ndcg({1, 2, 3}, {3, 1, 2}), 1.0 / (1.0 + 0.5 / std::log2(3.0)));
  std::vector<double> truth(20), pred(20);
  for (std::size_t i = 0; i < 20; ++i) truth[i] = pred[i] = static_cast<double>(i);
  std::swap(pred[18], pred[0]);
  hand_check(recall_top10(pred, truth), 0.5);

  const std::vector<std::function<double(double)>> maps = {
      [](double x) { return std::exp(x); }, [](double x) { return 3 * x - 7; },
      [](double x) { return x * x * x + x; }, [](double x) { return std::atan(x); }};
  double inv = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> p(n), t(n);
    std::vector<std::optional<int>> labels;
    for (auto& x : p) x = trial % 3 == 0 ? static_cast<double>(rng.below(4)) : rng.normal();
    for (auto& x : t) x = rng.normal();
    for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.below(2)));
    const MetricReport base = evaluate(p, t, labels);
    for (const auto& f : maps) {
      std::vector<double> p2;
      for (double x : p) p2.push_back(f(x));
      const MetricReport moved = evaluate(p2, t, labels);
      for (const auto& m : kMetricNames) {
        const double a = metric_value(base, m), b = metric_value(moved, m);
        if (std::isnan(a) != std::isnan(b)) inv = NAN;
        else if (!std::isnan(a)) inv = worst(inv, std::abs(a - b));
      }
    }
  }
  c.note("auc_labelings", labelings);
  c.note("auc_err", fmt(auc_err));
  c.note("hand_err", fmt(hand));
  c.note("monotone_err", fmt(inv));
  c.require(auc_err <= 1e-12, "auc differs from pair counting");
  c.require(hand <= 1e-12, "hand oracle mismatch");
  c.require(inv <= 1e-12, "metrics not invariant under increasing maps");
}

// ---------------------------------------------------------------- IRL

RewardModel random_reward(std::size_t A, std::size_t L, double coupling, Rng& rng) {
  RewardModel r{A, L, Matrix(L, A), {}};
  for (auto& v : r.weights.data) v = rng.normal();
  if (coupling > 0) {
    r.couplings.assign(L - 1, Matrix(A, A));
    for (auto& m : r.couplings)
      for (auto& v : m.data) v = coupling * rng.normal();
  }
  return r;
}

void irl(Check& c) {
  Rng rng(1);
  double norm = 0.0, shift = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const RewardModel r = random_reward(2 + rng.below(3), 1 + rng.below(6), trial % 2 ? 0.7 : 0.0, rng);
    const BoltzmannTable t = boltzmann_distribution(r);
    norm = worst(norm, std::abs(std::accumulate(t.prob.begin(), t.prob.end(), 0.0) - 1.0));
    RewardModel s = r;
    const double k = 50.0 * rng.normal();
    for (std::size_t a = 0; a < r.alphabet; ++a) s.weights(0, a) += k;
    const BoltzmannTable u = boltzmann_distribution(s);
    for (std::size_t i = 0; i < t.prob.size(); ++i) shift = worst(shift, std::abs(u.prob[i] - t.prob[i]));
  }
  double grad = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const RewardModel r = random_reward(3, 4, trial % 2 ? 0.6 : 0.0, rng);
    const auto demos = sample_demonstrations(ToyMDP{random_reward(3, 4, 0.3, rng), 1.0}, 500, rng.next());
    const Matrix g = irl_weight_gradient(r, demos);
    for (std::size_t k = 0; k < r.weights.data.size(); ++k) {
      RewardModel up = r, down = r;
      up.weights.data[k] += 1e-5;
      down.weights.data[k] -= 1e-5;
      const double fd = (irl_log_likelihood(up, demos) - irl_log_likelihood(down, demos)) / 2e-5;
      grad = worst(grad, std::abs(g.data[k] - fd));
    }
  }
  auto run = [](const char* file) {
    return mlm_as_irl_experiment(irl_config_from(parse_key_values(read_file(toy_dir() / file))));
  };
  const IrlReport count = run("irl_independent.cfg");
  const IrlReport fusion = run("irl_fusion.cfg");
  c.note("sum_err", fmt(norm));
  c.note("shift_err", fmt(shift));
  c.note("grad_err", fmt(grad));
  c.note("spearman_count", fmt(count.spearman_logodds_vs_delta_r));
  c.note("spearman_fusion", fmt(fusion.spearman_logodds_vs_delta_r));
  c.require(norm <= 1e-12, "Boltzmann table does not sum to 1");
  c.require(shift <= 1e-12, "Boltzmann table not shift-invariant");
  c.require(grad <= 1e-6, "MaxEnt gradient differs from finite differences");
  c.require(count.spearman_logodds_vs_delta_r > 0.95, "count-model Spearman <= 0.95");
  c.require(fusion.spearman_logodds_vs_delta_r > 0.95, "fusion-model Spearman <= 0.95");
}

// ---------------------------------------------------------------- scoring

fs::path small_checkpoint(const fs::path& dir) {
  const fs::path cfg = toy_train_config(dir, "");
  std::string text = read_file(cfg);
  text.replace(text.find("epochs = 200"), 12, "epochs = 5");
  write_file_atomic(cfg, text);
  cmd_train(cfg, std::nullopt, 1);
  return dir / "model.ckpt";
}

ScoreRequest score_request(const fs::path& ckpt, const std::string& id, const fs::path& out) {
  ScoreRequest r;
  r.checkpoint = ckpt;
  r.backbone = toy_dir() / (id + ".pdb");
  r.protein_id = id;
  r.struct_profile = toy_dir() / (id + ".profile");
  r.if_profile = toy_dir() / (id + ".if.profile");
  r.assay = toy_dir() / (id + "_assay.tsv");
  r.out = out;
  return r;
}

void scoring_identities(Check& c) {
  const ModelConfig cfg = tiny_model(true);
  const ModelInput in = toy_input(14, 31, cfg);
  ParamStore params = init_model_params(cfg, 32);
  Rng rng(33);
  for (const auto* block : {&kStructBlock, &kIfBlock})
    for (auto& v : params.at(*block + ".out.W").value.data) v = 0.2 * rng.normal();

  const double empty = score_variants(params, cfg, in, {MutationSet{}})[0].score;
  int swap_failures = 0;
  const std::string wt = in.record.sequence;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> pos(wt.size());
    std::iota(pos.begin(), pos.end(), 0);
    rng.shuffle(pos);
    MutationSet m, back;
    ProteinRecord mutated = in.record;
    for (std::size_t i = 0; i < 1 + rng.below(3); ++i) {
      char mt;
      do mt = kAminoAcids[rng.below(20)];
      while (mt == wt[pos[i]]);
      m.substitutions.push_back({static_cast<int>(pos[i] + 1), wt[pos[i]], mt});
      back.substitutions.push_back({static_cast<int>(pos[i] + 1), mt, wt[pos[i]]});
      mutated.sequence[pos[i]] = mt;
    }
    const ModelInput min = prepare_input(mutated, cfg, std::nullopt, in.struct_profile, in.if_profile);
    swap_failures += score_variants(params, cfg, in, {m})[0].score != -score_variants(params, cfg, min, {back})[0].score;
  }
  int affine_failures = 0;
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
    affine_failures += detail::descending_order(zscore_ensemble(a, b).scores) !=
                       detail::descending_order(zscore_ensemble(a2, b2).scores);
  }
  const fs::path dir = scratch_dir("acc_scoring");
  const fs::path ckpt = small_checkpoint(dir);
  cmd_score(score_request(ckpt, "toy1", dir / "a.tsv"));
  cmd_score(score_request(ckpt, "toy1", dir / "b.tsv"));
  const bool rerun_same = read_file(dir / "a.tsv") == read_file(dir / "b.tsv");
  c.note("empty_score", empty);
  c.note("swap_failures", swap_failures);
  c.note("affine_failures", affine_failures);
  c.note("rerun_identical", rerun_same ? "yes" : "no");
  c.require(empty == 0.0, "empty mutation set does not score 0");
  c.require(swap_failures == 0, "wt/mt swap does not negate");
  c.require(affine_failures == 0, "ensemble ranking changed under affine maps");
  c.require(rerun_same, "cmd_score rerun differs");
}

// ---------------------------------------------------------------- determinism

struct PipelineArtifacts {
  std::vector<std::string> files;
};

PipelineArtifacts run_pipeline(const fs::path& dir) {
  const fs::path cfg = toy_train_config(dir, "");
  cmd_train(cfg, std::nullopt, 1);
  PipelineArtifacts a;
  a.files.push_back(read_file(dir / "model.ckpt"));
  a.files.push_back(read_file(dir / "loss.tsv"));
  EvalRequest ev;
  for (const std::string id : {"toy1", "toy2", "toy3", "toy6"}) {
    cmd_score(score_request(dir / "model.ckpt", id, dir / (id + ".scores.tsv")));
    a.files.push_back(read_file(dir / (id + ".scores.tsv")));
    ev.inputs.push_back({dir / (id + ".scores.tsv"), toy_dir() / (id + "_assay.tsv")});
  }
  ev.group_keys = {"function_type", "taxon", "mutation_depth"};
  ev.out_json = dir / "report.json";
  ev.out_tsv = dir / "report.tsv";
  cmd_eval(ev);
  a.files.push_back(read_file(dir / "report.json"));
  a.files.push_back(read_file(dir / "report.tsv"));
  return a;
}

void determinism(Check& c) {
  const PipelineArtifacts a = run_pipeline(scratch_dir("acc_det_a"));
  const PipelineArtifacts b = run_pipeline(scratch_dir("acc_det_b"));
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.files.size(); ++i) same += a.files[i] == b.files[i];
  c.note("artifacts", a.files.size());
  c.note("identical", same);
  c.require(same == a.files.size(), "pipeline artifacts differ between runs");
}

struct Criterion {
  const char* name;
  double budget_s;
  void (*run)(Check&);
};

}  // namespace

int main() {
  unsetenv("EVOFIT_SEED");
  const std::vector<Criterion> criteria = {
      {"profile_oracle", 1, profile_oracle},
      {"se3_suite", 5, se3_suite},
      {"gradient_gate", 30, gradient_gate},
      {"ablation_mechanics", 300, ablation},
      {"masking_distribution", 60, masking},
      {"muon_newton_schulz", 60, muon},
      {"metric_oracles", 60, metric_oracles},
      {"irl_verification", 120, irl},
      {"scoring_identities", 120, scoring_identities},
      {"determinism", 300, determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= cr.budget_s) c.failures.push_back("runtime " + fmt(secs) + "s over budget");
    const bool ok = c.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS " : "FAIL ") << cr.name << "  " << c.detail.str() << "time=" << fmt(secs) << "s/"
              << cr.budget_s << "s";
    for (const auto& f : c.failures) std::cout << "  [" << f << "]";
    std::cout << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failed) << "/"
            << criteria.size() << std::endl;
  return failed ? 1 : 0;
}
