// Regenerates the bundled fixtures under data/toy (or a given folder).
//   make_toy_corpus <out_dir>
#include <iostream>

#include <nlohmann/json.hpp>

#include "evofit/pipeline.hpp"
#include "evofit/toy_corpus.hpp"

namespace {

using namespace evofit;

struct AssayPlan {
  std::size_t protein;
  toy::AssayMeta meta;
  std::size_t sites, doubles;
};

// Exporter-style plm outputs for one protein: a fixed projection of the
// toy embedding to 21 log-probabilities, unmasked and with one site masked.
LogitsTable toy_plm_logits(const ProteinRecord& rec, const std::vector<int>& tokens) {
  const Matrix emb = ToyEmbedder{64, 7}.embed(tokens);
  Rng rng(99);
  Matrix w(64, kNumCols);
  for (auto& v : w.data) v = 0.2 * rng.normal();
  LogitsTable t{LogitsSource::plm, std::string(kProfileAlphabet), Matrix(rec.length(), kNumCols)};
  for (std::size_t i = 0; i < rec.length(); ++i) {
    std::vector<double> z(kNumCols, 0.0);
    for (std::size_t c = 0; c < static_cast<std::size_t>(kNumCols); ++c)
      for (std::size_t k = 0; k < 64; ++k) z[c] += emb(i, k) * w(k, c);
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    for (std::size_t c = 0; c < static_cast<std::size_t>(kNumCols); ++c) t.values(i, c) = z[c] - mx - std::log(s);
  }
  return t;
}

void run(const fs::path& dir) {
  fs::create_directories(dir);
  const toy::CorpusSpec spec;
  const std::size_t n = spec.n_train + spec.n_heldout;
  std::string train_tsv = "id\tbackbone\tstruct_profile\tif_profile\tembedding\n";
  std::string held_tsv = train_tsv;
  std::vector<toy::ToyProtein> proteins;
  for (std::size_t i = 0; i < n; ++i) {
    toy::ToyProtein t = toy::corpus_protein(spec, i);
    const std::string id = t.record.id;
    write_file_atomic(dir / (id + ".pdb"), write_backbone(t.record));
    write_file_atomic(dir / (id + ".fasta"), write_fasta({{id, t.record.sequence}}));
    write_file_atomic(dir / (id + ".a3m"), t.a3m);
    write_file_atomic(dir / (id + ".if.logits"), write_logits(t.if_logits));
    // Golden profiles come from the same commands users run.
    cmd_build_profile(dir / (id + ".a3m"), dir / (id + ".fasta"), 0.9, dir / (id + ".profile"));
    cmd_if_profile(dir / (id + ".if.logits"), dir / (id + ".if.profile"));
    (i < spec.n_train ? train_tsv : held_tsv) += id + "\t" + id + ".pdb\t" + id + ".profile\t" + id + ".if.profile\t-\n";
    proteins.push_back(std::move(t));
  }
  write_file_atomic(dir / "train.tsv", train_tsv);
  write_file_atomic(dir / "heldout.tsv", held_tsv);

  // A query-only alignment exercises the degenerate-profile path.
  write_file_atomic(dir / "lonely.a3m", ">lonely\nACDEFGHIKL\n");

  const std::vector<AssayPlan> assays = {
      {0, {"activity", "high", "prokaryote"}, 8, 40},
      {1, {"stability", "high", "eukaryote"}, 6, 30},
      {2, {"binding", "low", "virus"}, 6, 30},
      {5, {"activity", "medium", "eukaryote"}, 7, 30},
  };
  Rng rng(spec.seed);
  for (const auto& a : assays) {
    const auto& t = proteins[a.protein];
    const AssayTable table = toy::make_assay(t, a.meta, a.sites, a.doubles, rng);
    write_file_atomic(dir / (t.record.id + "_assay.tsv"), write_assay_table(table));
    write_file_atomic(dir / (t.record.id + "_external.tsv"), toy::external_scores(table, rng));
  }

  // Exporter-format samples for toy1.
  const ProteinRecord& r1 = proteins[0].record;
  std::vector<int> tok = tokenize(r1.sequence);
  write_file_atomic(dir / "toy1.plm.logits", write_logits(toy_plm_logits(r1, tok)));
  tok[2] = kMaskToken;
  write_file_atomic(dir / "toy1.plm.mask3.logits", write_logits(toy_plm_logits(r1, tok)));
  write_file_atomic(dir / "toy1.emb", write_embedding(ToyEmbedder{64, 7}.embed(tokenize(r1.sequence))));
  nlohmann::ordered_json man;
  man["model"] = {{"plm", "toy-projection"}, {"inverse_folding", "toy-burial"}};
  man["proteins"] = nlohmann::ordered_json::array();
  man["proteins"].push_back({{"id", "toy1"},
                             {"files",
                              {{{"kind", "plm_logits"}, {"path", "toy1.plm.logits"}, {"masked", nlohmann::ordered_json::array()}},
                               {{"kind", "plm_logits"}, {"path", "toy1.plm.mask3.logits"}, {"masked", {3}}},
                               {{"kind", "embedding"}, {"path", "toy1.emb"}},
                               {{"kind", "if_logits"}, {"path", "toy1.if.logits"}}}}});
  write_file_atomic(dir / "export_manifest.json", man.dump(2) + "\n");

  write_file_atomic(dir / "train.cfg",
                    "# Toy training run over the bundled corpus.\n"
                    "dataset = train.tsv\n"
                    "heldout = heldout.tsv\n"
                    "checkpoint = model.ckpt\n"
                    "loss_log = loss.tsv\n"
                    "epochs = 200\n"
                    "seed = 17\n"
                    "lr_muon = 0.001\n"
                    "lr_adamw = 0.001\n"
                    "weight_decay = 0.1\n"
                    "mask_rate = 0.15\n"
                    "num_layers = 2\n"
                    "scalar_dim = 32\n"
                    "vector_dim = 8\n"
                    "d_model = 32\n"
                    "heads = 4\n"
                    "ffn = 64\n");
  write_file_atomic(dir / "irl_independent.cfg",
                    "alphabet = 4\nlength = 6\ntemperature = 1\ncoupling_scale = 0\nn_demos = 10000\nseed = 3\nmodel = count\n");
  write_file_atomic(dir / "irl_coupled.cfg",
                    "alphabet = 4\nlength = 6\ntemperature = 1\ncoupling_scale = 0.5\nn_demos = 10000\nseed = 3\nmodel = count\n");
  write_file_atomic(dir / "irl_fusion.cfg",
                    "alphabet = 4\nlength = 6\ntemperature = 1\ncoupling_scale = 0\nn_demos = 10000\nseed = 3\nmodel = fusion\n"
                    "fusion_train_demos = 4000\nfusion_epochs = 40\nfusion_batch = 32\nfusion_lr = 0.003\n");
  write_file_atomic(dir / "irl_too_big.cfg", "alphabet = 6\nlength = 8\nn_demos = 10\n");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_toy_corpus <out_dir>\n";
    return 2;
  }
  try {
    run(argv[1]);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
