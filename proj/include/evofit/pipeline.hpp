// The subcommands as library calls: each reads its inputs, computes, and
// writes outputs atomically. The command-line front end only parses flags.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "evofit/irl_lab.hpp"
#include "evofit/metrics.hpp"
#include "evofit/mlm_train.hpp"
#include "evofit/model.hpp"
#include "evofit/profile.hpp"
#include "evofit/scoring.hpp"
#include "evofit/seqio.hpp"

namespace evofit {

namespace fs = std::filesystem;

/// --seed beats EVOFIT_SEED, which beats the config file's seed key.
inline std::optional<std::uint64_t> resolve_seed(std::optional<std::uint64_t> flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("EVOFIT_SEED"); env && *env)
    return static_cast<std::uint64_t>(parse_long(env, "EVOFIT_SEED"));
  return std::nullopt;
}

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) fail(what + " '" + p.string() + "' does not exist");
}

/// Output directories must exist; atomic writes rename within them.
inline void require_writable(const fs::path& p) {
  const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(dir)) fail("output directory '" + dir.string() + "' does not exist");
}

// ---------------------------------------------------------------- profiles

struct BuildProfileResult {
  Profile profile;
  std::size_t kept_rows = 0;
  std::vector<std::string> warnings;
};

inline BuildProfileResult cmd_build_profile(const fs::path& a3m, const std::optional<fs::path>& query_fasta,
                                            double max_identity, const fs::path& out) {
  require_file(a3m, "alignment");
  require_writable(out);
  const std::string text = read_file(a3m);
  std::size_t L = 0;
  std::optional<std::string> query;
  if (query_fasta) {
    require_file(*query_fasta, "query FASTA");
    const auto recs = parse_fasta(read_file(*query_fasta));
    if (recs.size() != 1) fail("query FASTA must hold exactly one record");
    query = recs.front().sequence;
    L = query->size();
  } else {
    // Without a FASTA the first A3M record defines the query length.
    const auto lines = split_lines(text);
    bool in_first = false;
    for (const auto& raw : lines) {
      const std::string_view line = trim(raw);
      if (line.empty() || line.front() == '#') continue;
      if (line.front() == '>') {
        if (in_first) break;
        in_first = true;
        continue;
      }
      for (char c : line)
        if (c != '-' && !std::islower(static_cast<unsigned char>(c)) && !std::isspace(static_cast<unsigned char>(c))) ++L;
    }
  }
  const Alignment aln = parse_a3m(text, L);
  if (query && aln.query != *query) fail("A3M query does not match the query FASTA sequence");
  ProfileBuild b = build_sequence_profile(aln, {max_identity, false});
  write_file_atomic(out, write_profile(b.profile));
  return {b.profile, b.kept_rows, b.warnings};
}

inline Profile cmd_if_profile(const fs::path& logits, const fs::path& out) {
  require_file(logits, "logits file");
  require_writable(out);
  const Profile p = if_logits_to_profile(read_logits(read_file(logits)));
  write_file_atomic(out, write_profile(p));
  return p;
}

// ---------------------------------------------------------------- datasets

/// One protein's files. Empty paths mean "not supplied".
struct DatasetEntry {
  std::string id;
  fs::path backbone;
  fs::path struct_profile;
  fs::path if_profile;
  fs::path embedding;
};

/// TSV with header id, backbone, struct_profile, if_profile, embedding;
/// "-" marks an absent file. Paths resolve against the manifest's folder.
inline std::vector<DatasetEntry> read_manifest(const fs::path& path) {
  require_file(path, "dataset manifest");
  const auto lines = split_lines(read_file(path));
  const std::vector<std::string> header{"id", "backbone", "struct_profile", "if_profile", "embedding"};
  if (lines.empty() || split(lines[0], '\t') != header)
    fail("dataset manifest '" + path.string() + "': header must be id\\tbackbone\\tstruct_profile\\tif_profile\\tembedding");
  const fs::path base = path.parent_path();
  std::vector<DatasetEntry> out;
  std::set<std::string> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto c = split(lines[ln], '\t');
    if (c.size() != header.size()) fail("dataset manifest row " + std::to_string(ln) + ": expected 5 columns");
    if (!seen.insert(c[0]).second) fail("dataset manifest: duplicate protein id '" + c[0] + "'");
    auto resolve = [&](const std::string& s) { return s == "-" || s.empty() ? fs::path() : base / s; };
    out.push_back({c[0], resolve(c[1]), resolve(c[2]), resolve(c[3]), resolve(c[4])});
  }
  if (out.empty()) fail("dataset manifest '" + path.string() + "' lists no proteins");
  return out;
}

inline ModelInput load_entry(const DatasetEntry& e, const ModelConfig& cfg) {
  auto need = [&](const fs::path& p, const char* what) {
    if (p.empty()) fail("protein '" + e.id + "': missing " + what);
    if (!fs::is_regular_file(p)) fail("protein '" + e.id + "': " + what + " '" + p.string() + "' does not exist");
  };
  need(e.backbone, "backbone file");
  try {
    ProteinRecord rec = parse_backbone(read_file(e.backbone), e.id);
    rec.id = e.id;
    std::optional<Profile> sp, ip;
    std::optional<Matrix> emb;
    if (cfg.use_struct_profile) {
      need(e.struct_profile, "structure profile");
      sp = read_profile(read_file(e.struct_profile));
    }
    if (cfg.use_if_profile) {
      need(e.if_profile, "inverse-folding profile");
      ip = read_profile(read_file(e.if_profile));
    }
    if (!e.embedding.empty()) {
      need(e.embedding, "embedding");
      emb = read_embedding(read_file(e.embedding));
    }
    return prepare_input(std::move(rec), cfg, std::move(emb), std::move(sp), std::move(ip));
  } catch (const Error& err) {
    const std::string msg = err.what();
    if (msg.find("'" + e.id + "'") != std::string::npos) throw;
    fail("protein '" + e.id + "': " + msg);
  }
}

inline std::vector<ModelInput> load_dataset(const std::vector<DatasetEntry>& entries, const ModelConfig& cfg, int jobs) {
  std::vector<ModelInput> out(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i) { out[i] = load_entry(entries[i], cfg); });
  return out;
}

// ---------------------------------------------------------------- train

struct TrainRun {
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  fs::path dataset, checkpoint, loss_log;
  std::optional<fs::path> heldout;
};

inline TrainRun read_train_config(const fs::path& path, std::optional<std::uint64_t> seed_flag) {
  require_file(path, "train config");
  const auto kv = parse_key_values(read_file(path));
  TrainRun r;
  r.model = model_config_from(kv);
  r.train = train_config_from(kv);
  const fs::path base = path.parent_path();
  auto path_key = [&](const char* key, bool required) -> fs::path {
    auto it = kv.find(key);
    if (it == kv.end()) {
      if (required) fail("train config: missing '" + std::string(key) + "'");
      return {};
    }
    return base / it->second;
  };
  r.dataset = path_key("dataset", true);
  r.checkpoint = path_key("checkpoint", false);
  r.loss_log = path_key("loss_log", false);
  if (fs::path h = path_key("heldout", false); !h.empty()) r.heldout = h;
  if (auto s = resolve_seed(seed_flag)) r.train.seed = *s;
  r.seed = r.train.seed;
  return r;
}

struct TrainOutcome {
  TrainResult result;
  std::optional<double> heldout_loss;
};

inline std::string format_loss_log(const TrainOutcome& o) {
  std::string s = "epoch\tloss\n";
  for (std::size_t e = 0; e < o.result.epoch_loss.size(); ++e)
    s += std::to_string(e + 1) + "\t" + format_double(o.result.epoch_loss[e]) + "\n";
  if (o.heldout_loss) s += "# heldout_loss " + format_double(*o.heldout_loss) + "\n";
  return s;
}

/// Seed stream: parameter init, then the training loop, then held-out plans.
inline TrainOutcome cmd_train(const fs::path& config, std::optional<std::uint64_t> seed_flag, int jobs,
                              const std::optional<fs::path>& checkpoint = {}, const std::optional<fs::path>& loss_log = {}) {
  TrainRun run = read_train_config(config, seed_flag);
  run.train.jobs = jobs;
  if (checkpoint) run.checkpoint = *checkpoint;
  if (loss_log) run.loss_log = *loss_log;
  if (run.checkpoint.empty()) fail("train config: missing 'checkpoint'");
  if (run.loss_log.empty()) fail("train config: missing 'loss_log'");
  require_writable(run.checkpoint);
  require_writable(run.loss_log);
  const auto data = load_dataset(read_manifest(run.dataset), run.model, jobs);
  Rng seeds(run.seed);
  ParamStore init = init_model_params(run.model, seeds.next());
  TrainConfig tc = run.train;
  tc.seed = seeds.next();
  TrainOutcome o;
  o.result = train(data, run.model, tc, std::move(init));
  const std::uint64_t eval_seed = seeds.next();
  if (run.heldout) {
    const auto held = load_dataset(read_manifest(*run.heldout), run.model, jobs);
    o.heldout_loss = evaluate_mlm(o.result.params, run.model, held, tc.mask_rate, eval_seed);
  }
  o.result.params.meta["seed"] = std::to_string(run.seed);
  write_file_atomic(run.checkpoint, write_checkpoint(o.result.params));
  write_file_atomic(run.loss_log, format_loss_log(o));
  return o;
}

// ---------------------------------------------------------------- score

struct ScoreRequest {
  fs::path checkpoint;
  fs::path backbone;
  std::string protein_id;
  std::optional<fs::path> struct_profile, if_profile, embedding;
  fs::path assay;
  ScoreMode mode = ScoreMode::evoif;
  std::optional<fs::path> external;
  fs::path out;
  int jobs = 1;
};

inline AssayScores cmd_score(const ScoreRequest& r) {
  require_file(r.checkpoint, "checkpoint");
  require_file(r.assay, "assay table");
  require_writable(r.out);
  if (r.mode == ScoreMode::evoif_msa && !r.external) fail("evoif_msa mode requires --external scores");
  const ParamStore params = read_checkpoint(read_file(r.checkpoint));
  const ModelConfig cfg = model_config_from(params.meta);
  DatasetEntry e{r.protein_id.empty() ? r.backbone.stem().string() : r.protein_id, r.backbone,
                 r.struct_profile.value_or(fs::path()), r.if_profile.value_or(fs::path()), r.embedding.value_or(fs::path())};
  const ModelInput in = load_entry(e, cfg);
  const AssayTable assay = parse_assay_table(read_file(r.assay));
  std::map<std::string, double> ext;
  if (r.external) {
    require_file(*r.external, "external scores");
    ext = parse_external_scores(read_file(*r.external));
  }
  AssayScores s = score_assay(params, cfg, in, assay, r.mode, r.external ? &ext : nullptr, r.jobs);
  write_file_atomic(r.out, write_scores(s));
  return s;
}

// ---------------------------------------------------------------- eval

struct EvalInput {
  fs::path scores;
  fs::path assay;
};

struct EvalRequest {
  std::vector<EvalInput> inputs;
  std::vector<std::string> group_keys;
  ThresholdRule rule = ThresholdRule::median;
  std::optional<fs::path> out_json, out_tsv;
  int jobs = 1;
};

struct EvalOutcome {
  std::vector<MetricReport> reports;
  std::vector<GroupSummary> groups;
  std::string json, tsv;
};

/// Rows of an assay matched to its scores by mutant string.
inline MetricReport evaluate_rows(const std::string& name, const std::vector<const AssayRecord*>& rows,
                                  const std::map<std::string, double>& pred, ThresholdRule rule) {
  std::vector<double> p, t;
  std::vector<std::optional<int>> labels;
  for (const auto* r : rows) {
    p.push_back(pred.at(r->mutant_text));
    t.push_back(r->dms_score);
    labels.push_back(r->dms_bin);
  }
  MetricReport m = evaluate(p, t, labels, rule);
  m.assay = name;
  return m;
}

/// Assay-level tags: values shared by every row (mutation_depth excluded).
inline std::map<std::string, std::string> assay_tags(const AssayTable& a) {
  std::map<std::string, std::string> tags;
  for (const auto& col : a.tag_columns) {
    if (col == "mutation_depth" || a.rows.empty()) continue;
    auto first = a.rows.front().tags.find(col);
    if (first == a.rows.front().tags.end()) continue;
    bool same = true;
    for (const auto& r : a.rows) {
      auto it = r.tags.find(col);
      same = same && it != r.tags.end() && it->second == first->second;
    }
    if (same) tags[col] = first->second;
  }
  return tags;
}

inline EvalOutcome cmd_eval(const EvalRequest& req) {
  if (req.inputs.empty()) fail("eval: need at least one --scores/--assay pair");
  for (const auto* p : {&req.out_json, &req.out_tsv})
    if (*p) require_writable(**p);
  struct Loaded {
    std::string name;
    AssayTable assay;
    std::map<std::string, double> pred;
  };
  std::vector<Loaded> loaded(req.inputs.size());
  parallel_for(req.inputs.size(), req.jobs, [&](std::size_t i) {
    const auto& in = req.inputs[i];
    require_file(in.scores, "scores file");
    require_file(in.assay, "assay table");
    Loaded l;
    l.name = in.assay.stem().string();
    l.assay = parse_assay_table(read_file(in.assay));
    for (const auto& [m, s] : read_scores(read_file(in.scores))) l.pred[m] = s;
    std::vector<std::string> missing, extra;
    std::set<std::string> in_assay;
    for (const auto& r : l.assay.rows) {
      in_assay.insert(r.mutant_text);
      if (!l.pred.count(r.mutant_text)) missing.push_back(r.mutant_text);
    }
    for (const auto& [m, _] : l.pred)
      if (!in_assay.count(m)) extra.push_back(m);
    auto list = [](const std::vector<std::string>& v) {
      std::string s;
      for (std::size_t k = 0; k < v.size() && k < 10; ++k) s += (k ? "," : "") + v[k];
      if (v.size() > 10) s += ",... (" + std::to_string(v.size()) + " total)";
      return s;
    };
    if (!missing.empty()) fail("assay '" + l.name + "': scores missing for mutants " + list(missing));
    if (!extra.empty()) fail("assay '" + l.name + "': scores for mutants not in the assay " + list(extra));
    loaded[i] = std::move(l);
  });

  EvalOutcome o;
  for (const auto& l : loaded) {
    std::vector<const AssayRecord*> rows;
    for (const auto& r : l.assay.rows) rows.push_back(&r);
    MetricReport m = evaluate_rows(l.name, rows, l.pred, req.rule);
    m.tags = assay_tags(l.assay);
    o.reports.push_back(std::move(m));
  }
  for (const auto& key : req.group_keys) {
    if (key != "mutation_depth") {
      o.groups.push_back(breakdown(o.reports, key));
      continue;
    }
    // Depth varies within an assay, so each assay contributes one
    // sub-report per depth.
    std::vector<MetricReport> parts;
    for (const auto& l : loaded) {
      std::map<std::string, std::vector<const AssayRecord*>> by_depth;
      for (const auto& r : l.assay.rows) {
        auto it = r.tags.find("mutation_depth");
        by_depth[it == r.tags.end() ? std::to_string(r.mutant.size()) : it->second].push_back(&r);
      }
      for (const auto& [depth, rows] : by_depth) {
        MetricReport m = evaluate_rows(l.name, rows, l.pred, req.rule);
        m.tags["mutation_depth"] = depth;
        parts.push_back(std::move(m));
      }
    }
    o.groups.push_back(breakdown(parts, key));
  }
  o.json = report_json(o.reports, o.groups, req.rule);
  o.tsv = report_tsv(o.reports, o.groups);
  if (req.out_json) write_file_atomic(*req.out_json, o.json);
  if (req.out_tsv) write_file_atomic(*req.out_tsv, o.tsv);
  return o;
}

// ---------------------------------------------------------------- irl-demo

struct IrlOutcome {
  IrlExperimentConfig config;
  IrlReport report;
  std::string json;
};

inline IrlOutcome cmd_irl_demo(const fs::path& config, std::optional<std::uint64_t> seed_flag,
                               const std::optional<fs::path>& out) {
  require_file(config, "irl config");
  if (out) require_writable(*out);
  IrlOutcome o;
  o.config = irl_config_from(parse_key_values(read_file(config)));
  if (auto s = resolve_seed(seed_flag)) o.config.seed = *s;
  state_count(o.config.alphabet, o.config.length);
  o.report = mlm_as_irl_experiment(o.config);
  o.json = irl_report_json(o.report, o.config);
  if (out) write_file_atomic(*out, o.json);
  return o;
}

}  // namespace evofit
