// evofit command-line front end.
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "evofit/pipeline.hpp"

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << one_line(w) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  using namespace evofit;
  CLI::App app{"evofit: evolutionary-profile fitness prediction at desk scale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  int jobs = 1;
  std::optional<std::uint64_t> seed;
  app.add_option("--jobs,-j", jobs, "Worker threads for per-protein / per-assay work")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed for all randomness (fallback: EVOFIT_SEED, then the config file)");

  // build-profile
  std::string bp_a3m, bp_out;
  std::optional<std::string> bp_fasta;
  double bp_max_id = 0.9;
  auto* bp = app.add_subcommand("build-profile", "Column-frequency profile from an A3M alignment");
  bp->add_option("--a3m", bp_a3m, "Homolog alignment (A3M)")->required();
  bp->add_option("--query", bp_fasta, "Query FASTA; must match the first A3M record");
  bp->add_option("--max-identity", bp_max_id, "Drop homologs with identity to the query above this")
      ->check(CLI::Range(0.0, 1.0));
  bp->add_option("--out,-o", bp_out, "Output profile file")->required();

  // if-profile
  std::string ip_logits, ip_out;
  auto* ip = app.add_subcommand("if-profile", "Profile from inverse-folding log-probabilities");
  ip->add_option("--logits", ip_logits, "Logits file with source=inverse_folding")->required();
  ip->add_option("--out,-o", ip_out, "Output profile file")->required();

  // train
  std::string tr_config;
  auto* tr = app.add_subcommand("train", "Masked-LM training; writes checkpoint and loss log named in the config");
  std::optional<std::string> tr_ckpt, tr_log;
  tr->add_option("config", tr_config, "Key-value training config")->required();
  tr->add_option("--checkpoint", tr_ckpt, "Override the config's checkpoint path");
  tr->add_option("--loss-log", tr_log, "Override the config's loss_log path");

  // score
  ScoreRequest sc;
  std::string sc_mode = "evoif";
  std::optional<std::string> sc_sp, sc_ip, sc_emb, sc_ext;
  std::string sc_ckpt, sc_bb, sc_assay, sc_out;
  auto* s = app.add_subcommand("score", "Log-odds scores for every variant of an assay");
  s->add_option("--checkpoint", sc_ckpt, "Trained parameter checkpoint")->required();
  s->add_option("--backbone", sc_bb, "Backbone file of the wild type")->required();
  s->add_option("--id", sc.protein_id, "Protein id used in messages (default: backbone file stem)");
  s->add_option("--struct-profile", sc_sp, "Structure/sequence profile file");
  s->add_option("--if-profile", sc_ip, "Inverse-folding profile file");
  s->add_option("--embedding", sc_emb, "Embedding file replacing the toy embedder");
  s->add_option("--assay", sc_assay, "Assay table (TSV)")->required();
  s->add_option("--mode", sc_mode, "evoif or evoif_msa")->check(CLI::IsMember({"evoif", "evoif_msa"}));
  s->add_option("--external", sc_ext, "External per-variant scores (mutant\\tscore) for evoif_msa");
  s->add_option("--out,-o", sc_out, "Output scores TSV")->required();

  // eval
  std::vector<std::string> ev_scores, ev_assays, ev_groups;
  std::string ev_rule = "median";
  std::optional<std::string> ev_json, ev_tsv;
  auto* ev = app.add_subcommand("eval", "Metrics per assay plus grouped breakdowns");
  ev->add_option("--scores", ev_scores, "Scores TSV (repeat; pairs with --assay in order)")->required();
  ev->add_option("--assay", ev_assays, "Assay table (repeat)")->required();
  ev->add_option("--group-key", ev_groups, "Breakdown key: function_type, msa_depth_bucket, taxon or mutation_depth");
  ev->add_option("--mcc-threshold", ev_rule, "median or prevalence_quantile")
      ->check(CLI::IsMember({"median", "prevalence_quantile"}));
  ev->add_option("--out-json", ev_json, "JSON report path");
  ev->add_option("--out-tsv", ev_tsv, "TSV report path");

  // irl-demo
  std::string irl_config;
  std::optional<std::string> irl_out;
  auto* irl = app.add_subcommand("irl-demo", "Exact toy check that masked log-odds recover reward differences");
  irl->add_option("config", irl_config, "Key-value experiment config")->required();
  irl->add_option("--out,-o", irl_out, "JSON report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*bp) {
      auto r = cmd_build_profile(bp_a3m, bp_fasta ? std::optional<fs::path>(*bp_fasta) : std::nullopt, bp_max_id, bp_out);
      warn(r.warnings);
    } else if (*ip) {
      cmd_if_profile(ip_logits, ip_out);
    } else if (*tr) {
      auto o = cmd_train(tr_config, seed, jobs, tr_ckpt ? std::optional<fs::path>(*tr_ckpt) : std::nullopt,
                         tr_log ? std::optional<fs::path>(*tr_log) : std::nullopt);
      std::cerr << "trained " << o.result.epoch_loss.size() << " epochs, final loss "
                << format_double(o.result.epoch_loss.empty() ? 0.0 : o.result.epoch_loss.back()) << "\n";
      if (o.heldout_loss) std::cerr << "heldout loss " << format_double(*o.heldout_loss) << "\n";
    } else if (*s) {
      sc.checkpoint = sc_ckpt;
      sc.backbone = sc_bb;
      sc.assay = sc_assay;
      sc.out = sc_out;
      sc.mode = parse_score_mode(sc_mode);
      if (sc_sp) sc.struct_profile = *sc_sp;
      if (sc_ip) sc.if_profile = *sc_ip;
      if (sc_emb) sc.embedding = *sc_emb;
      if (sc_ext) sc.external = *sc_ext;
      sc.jobs = jobs;
      warn(cmd_score(sc).warnings);
    } else if (*ev) {
      if (ev_scores.size() != ev_assays.size()) fail("eval: --scores and --assay must be given the same number of times");
      EvalRequest req;
      for (std::size_t i = 0; i < ev_scores.size(); ++i) req.inputs.push_back({ev_scores[i], ev_assays[i]});
      req.group_keys = ev_groups;
      req.rule = parse_threshold_rule(ev_rule);
      if (ev_json) req.out_json = *ev_json;
      if (ev_tsv) req.out_tsv = *ev_tsv;
      req.jobs = jobs;
      auto o = cmd_eval(req);
      for (const auto& r : o.reports)
        for (const auto& w : r.warnings) std::cerr << "warning: assay '" << r.assay << "': " << one_line(w) << "\n";
      if (!ev_json && !ev_tsv) std::cout << o.tsv;
    } else if (*irl) {
      auto o = cmd_irl_demo(irl_config, seed, irl_out ? std::optional<fs::path>(*irl_out) : std::nullopt);
      if (!irl_out) std::cout << o.json;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
