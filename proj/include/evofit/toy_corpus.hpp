// Synthetic fixtures: small helical-bundle backbones with a burial-driven
// sequence model, homolog alignments, inverse-folding-like logits, and
// mutational scans scored against the same generative model.
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "evofit/common.hpp"
#include "evofit/profile.hpp"
#include "evofit/seqio.hpp"

namespace evofit::toy {

inline constexpr std::string_view kBuriedResidues = "AVILMFWC";
inline constexpr std::string_view kExposedResidues = "DEKRNQSTHGPY";
// A common non-canonical column order for inverse-folding outputs.
inline constexpr std::string_view kIfAlphabet = "ARNDCQEGHILKMFPSTWYV";

struct ToyProtein {
  ProteinRecord record;
  std::vector<double> burial;       // in [0, 1]
  Matrix site_distribution;         // L x 20 generative distribution
  std::string a3m;
  LogitsTable if_logits;
  std::size_t n_homologs = 0;
};

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

/// Two or three antiparallel helices packed around the z axis. Residues
/// facing the bundle centre count as buried.
inline std::vector<ResidueFrame> bundle_backbone(std::size_t length, Rng& rng, std::vector<double>& burial) {
  const std::size_t n_helix = 2 + rng.below(2);
  const double spread = 4.8 + rng.uniform();
  const std::size_t per = (length + n_helix - 1) / n_helix;
  std::vector<ResidueFrame> bb;
  burial.clear();
  for (std::size_t h = 0; h < n_helix && bb.size() < length; ++h) {
    const double ang = 2.0 * M_PI * static_cast<double>(h) / static_cast<double>(n_helix);
    const double ax = spread * std::cos(ang), ay = spread * std::sin(ang);
    const double phase = rng.uniform() * 2.0 * M_PI;
    const double dir = h % 2 == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < per && bb.size() < length; ++i) {
      const double t = phase + static_cast<double>(i) * 100.0 * M_PI / 180.0;
      const double z = dir * (1.5 * static_cast<double>(i) - 0.75 * static_cast<double>(per));
      Vec3 ca{ax + 2.3 * std::cos(t) + 0.15 * rng.normal(), ay + 2.3 * std::sin(t) + 0.15 * rng.normal(),
              z + 0.15 * rng.normal()};
      for (auto& v : ca) v = round3(v);
      const Vec3 n{round3(ca[0] - 0.53 * std::cos(t) + 0.9 * std::sin(t)), round3(ca[1] - 0.53 * std::sin(t) - 0.9 * std::cos(t)),
                   round3(ca[2] - dir * 0.81)};
      const Vec3 c{round3(ca[0] + 0.61 * std::cos(t) - 0.8 * std::sin(t)), round3(ca[1] + 0.61 * std::sin(t) + 0.8 * std::cos(t)),
                   round3(ca[2] + dir * 0.92)};
      bb.push_back({n, ca, c});
      // inward-facing when the radial offset points at the bundle centre
      const double inward = -(std::cos(t) * std::cos(ang) + std::sin(t) * std::sin(ang));
      burial.push_back(0.5 * (1.0 + inward));
    }
  }
  return bb;
}

/// Per-site distribution over the 20 residues: burial picks the class,
/// `native_weight` keeps mass on the native residue when given.
inline std::vector<double> site_distribution(double burial, int native = -1, double native_weight = 0.0) {
  std::vector<double> p(kNumAA, 0.002);
  for (char c : kBuriedResidues) p[static_cast<std::size_t>(aa_index(c))] += burial / static_cast<double>(kBuriedResidues.size());
  for (char c : kExposedResidues)
    p[static_cast<std::size_t>(aa_index(c))] += (1.0 - burial) / static_cast<double>(kExposedResidues.size());
  double z = 0.0;
  for (double v : p) z += v;
  for (auto& v : p) v = (1.0 - native_weight) * v / z;
  if (native >= 0) p[static_cast<std::size_t>(native)] += native_weight;
  return p;
}

inline int draw(const std::vector<double>& p, Rng& rng) {
  double u = rng.uniform();
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (u < p[a]) return static_cast<int>(a);
    u -= p[a];
  }
  return static_cast<int>(p.size() - 1);
}

/// Homologs mutate the native at a per-row rate, with short gap runs,
/// lowercase insertions, and the occasional truncated row.
inline std::string homolog_a3m(const ToyProtein& t, std::size_t n, Rng& rng) {
  const std::string& q = t.record.sequence;
  std::string out = ">" + t.record.id + "\n" + q + "\n";
  for (std::size_t k = 0; k < n; ++k) {
    const double rate = 0.05 + 0.5 * rng.uniform();
    std::string row;
    for (std::size_t i = 0; i < q.size(); ++i) {
      char c = q[i];
      if (rng.uniform() < rate) {
        std::vector<double> p(kNumAA);
        for (std::size_t a = 0; a < kNumAA; ++a) p[a] = t.site_distribution(i, a);
        c = kAminoAcids[static_cast<std::size_t>(draw(p, rng))];
      }
      if (rng.uniform() < 0.04) c = '-';
      row.push_back(c);
      if (rng.uniform() < 0.03) row.push_back("acdefghiklmnpqrstvwy"[rng.below(20)]);
    }
    if (rng.uniform() < 0.15) {
      // drop a trailing stretch of match columns and any insertions in it
      std::size_t keep = q.size() - 1 - rng.below(q.size() / 4);
      std::string cut;
      std::size_t cols = 0;
      for (char c : row) {
        const bool is_col = !std::islower(static_cast<unsigned char>(c));
        if (is_col && cols == keep) break;
        cut.push_back(c);
        cols += is_col ? 1 : 0;
      }
      row = cut;
    }
    out += ">" + t.record.id + "_hom" + std::to_string(k + 1) + "\n" + row + "\n";
  }
  return out;
}

/// Structure-conditioned log-probabilities in kIfAlphabet order.
inline LogitsTable toy_if_logits(const ToyProtein& t) {
  LogitsTable lt{LogitsSource::inverse_folding, std::string(kIfAlphabet), Matrix(t.record.length(), kNumAA)};
  for (std::size_t i = 0; i < t.record.length(); ++i) {
    const auto p = site_distribution(t.burial[i], aa_index(t.record.sequence[i]), 0.3);
    for (std::size_t c = 0; c < kNumAA; ++c) lt.values(i, c) = std::log(p[static_cast<std::size_t>(aa_index(kIfAlphabet[c]))]);
  }
  return lt;
}

inline ToyProtein make_protein(const std::string& id, std::size_t length, std::size_t n_homologs, std::uint64_t seed) {
  Rng rng(seed);
  ToyProtein t;
  t.record.id = id;
  t.record.backbone = bundle_backbone(length, rng, t.burial);
  t.site_distribution = Matrix(length, kNumAA);
  for (std::size_t i = 0; i < length; ++i) {
    const auto p = site_distribution(t.burial[i]);
    const int a = draw(p, rng);
    t.record.sequence.push_back(kAminoAcids[static_cast<std::size_t>(a)]);
    const auto q = site_distribution(t.burial[i], a, 0.4);
    for (std::size_t c = 0; c < kNumAA; ++c) t.site_distribution(i, c) = q[c];
  }
  t.n_homologs = n_homologs;
  t.a3m = homolog_a3m(t, n_homologs, rng);
  t.if_logits = toy_if_logits(t);
  return t;
}

struct AssayMeta {
  std::string function_type;
  std::string msa_depth_bucket;
  std::string taxon;
};

/// Single-site scans at a handful of positions plus random doubles. Truth
/// is the generative log-ratio plus noise; the bin marks above-mean rows.
inline AssayTable make_assay(const ToyProtein& t, const AssayMeta& meta, std::size_t n_sites, std::size_t n_doubles,
                             Rng& rng) {
  const std::string& wt = t.record.sequence;
  const std::size_t L = wt.size();
  std::vector<std::size_t> pos(L);
  std::iota(pos.begin(), pos.end(), 0);
  rng.shuffle(pos);
  pos.resize(std::min(n_sites, L));
  std::sort(pos.begin(), pos.end());
  auto term = [&](std::size_t i, char mt) {
    return std::log(t.site_distribution(i, static_cast<std::size_t>(aa_index(mt)))) -
           std::log(t.site_distribution(i, static_cast<std::size_t>(aa_index(wt[i]))));
  };
  AssayTable table;
  table.tag_columns = {"function_type", "msa_depth_bucket", "taxon", "mutation_depth"};
  auto push = [&](MutationSet m) {
    double s = 0.25 * rng.normal();
    for (const auto& sub : m.substitutions) s += term(static_cast<std::size_t>(sub.position - 1), sub.mt);
    AssayRecord r;
    r.mutant_text = to_string(m);
    r.mutant = std::move(m);
    r.dms_score = std::round(s * 1e6) / 1e6;
    r.tags = {{"function_type", meta.function_type},
              {"msa_depth_bucket", meta.msa_depth_bucket},
              {"taxon", meta.taxon},
              {"mutation_depth", std::to_string(r.mutant.size())}};
    table.rows.push_back(std::move(r));
  };
  for (std::size_t i : pos)
    for (char mt : kAminoAcids)
      if (mt != wt[i]) push(MutationSet{{{static_cast<int>(i + 1), wt[i], mt}}});
  for (std::size_t d = 0; d < n_doubles; ++d) {
    std::size_t a = rng.below(L), b = rng.below(L - 1);
    if (b >= a) ++b;
    if (a > b) std::swap(a, b);
    auto other = [&](std::size_t i) {
      char c;
      do c = kAminoAcids[rng.below(kNumAA)];
      while (c == wt[i]);
      return c;
    };
    push(MutationSet{{{static_cast<int>(a + 1), wt[a], other(a)}, {static_cast<int>(b + 1), wt[b], other(b)}}});
  }
  double mean = 0.0;
  for (const auto& r : table.rows) mean += r.dms_score;
  mean /= static_cast<double>(table.rows.size());
  for (auto& r : table.rows) r.dms_bin = r.dms_score > mean ? 1 : 0;
  return table;
}

/// A noisy copy of the assay truth, in the external-score TSV layout.
inline std::string external_scores(const AssayTable& assay, Rng& rng) {
  std::string out = "mutant\tscore\n";
  for (const auto& r : assay.rows) out += r.mutant_text + "\t" + format_double(std::round((r.dms_score + 0.8 * rng.normal()) * 1e6) / 1e6) + "\n";
  return out;
}

struct CorpusSpec {
  std::uint64_t seed = 2024;
  std::size_t n_train = 5;
  std::size_t n_heldout = 2;
};

/// Protein i of the corpus; lengths and homolog counts vary with i.
inline ToyProtein corpus_protein(const CorpusSpec& spec, std::size_t i) {
  const std::size_t length = 24 + (i * 7) % 17;
  const std::size_t homologs = i % 3 == 2 ? 6 : 24 + 4 * (i % 4);
  return make_protein("toy" + std::to_string(i + 1), length, homologs, spec.seed * 1000 + i);
}

}  // namespace evofit::toy
