// Position-specific evolutionary profiles: column frequencies over the
// 20 amino acids plus gap, built either from a homolog alignment or from
// the per-position likelihoods of an inverse-folding model.
#pragma once

#include <string>
#include <vector>

#include "evofit/common.hpp"
#include "evofit/seqio.hpp"

namespace evofit {

/// L x 21 row-stochastic matrix in kProfileAlphabet column order.
struct Profile {
  Matrix matrix;

  std::size_t length() const { return matrix.rows; }
  bool operator==(const Profile&) const = default;
};

inline constexpr double kProfileRowTolerance = 1e-9;

inline void validate(const Profile& p) {
  if (p.matrix.cols != kNumCols) fail("profile must have 21 columns");
  for (std::size_t i = 0; i < p.matrix.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < p.matrix.cols; ++j) {
      const double v = p.matrix(i, j);
      if (!(v >= 0.0 && v <= 1.0)) fail("profile row " + std::to_string(i + 1) + ": entry outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kProfileRowTolerance)
      fail("profile row " + std::to_string(i + 1) + ": sums to " + format_double(sum));
  }
}

/// Identity over columns where both strings are non-gap; 0 if there are none.
inline double pairwise_identity(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) fail("pairwise_identity: length mismatch");
  std::size_t cols = 0, matches = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == '-' || b[i] == '-') continue;
    ++cols;
    if (a[i] == b[i]) ++matches;
  }
  return cols == 0 ? 0.0 : static_cast<double>(matches) / static_cast<double>(cols);
}

struct ProfileOptions {
  double max_identity = 0.9;
  // Reserved for per-sequence weighting; profiles are plain frequencies.
  bool weighted = false;
};

struct ProfileBuild {
  Profile profile;
  std::size_t kept_rows = 0;
  std::vector<std::string> warnings;
};

/// Drops homologs whose identity to the query exceeds max_identity, then
/// counts residue and gap frequencies per column over the kept rows.
inline ProfileBuild build_sequence_profile(const Alignment& aln, const ProfileOptions& opts = {}) {
  if (aln.rows.empty()) fail("build_sequence_profile: empty alignment");
  if (!(opts.max_identity > 0.0 && opts.max_identity <= 1.0)) fail("build_sequence_profile: max_identity must be in (0, 1]");
  if (opts.weighted) fail("build_sequence_profile: sequence weighting is not implemented");
  const std::size_t L = aln.query.size();
  for (std::size_t r = 0; r < aln.rows.size(); ++r)
    if (aln.rows[r].size() != L)
      fail("build_sequence_profile: row " + std::to_string(r) + " has length " + std::to_string(aln.rows[r].size()) +
           ", expected " + std::to_string(L));

  std::vector<const std::string*> kept{&aln.rows.front()};
  for (std::size_t r = 1; r < aln.rows.size(); ++r)
    if (pairwise_identity(aln.rows[r], aln.query) <= opts.max_identity) kept.push_back(&aln.rows[r]);

  ProfileBuild out;
  out.kept_rows = kept.size();
  if (kept.size() == 1)
    out.warnings.push_back("degenerate alignment: no homologs left after identity filter; profile is the query one-hot");

  std::vector<std::vector<std::size_t>> counts(L, std::vector<std::size_t>(kNumCols, 0));
  for (const std::string* row : kept)
    for (std::size_t i = 0; i < L; ++i) {
      const int j = aa_index((*row)[i]);
      if (j < 0) fail("build_sequence_profile: invalid character in alignment");
      ++counts[i][static_cast<std::size_t>(j)];
    }
  const double n = static_cast<double>(kept.size());
  out.profile.matrix = Matrix(L, kNumCols);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumCols); ++j)
      out.profile.matrix(i, j) = static_cast<double>(counts[i][j]) / n;
  return out;
}

/// Exponentiates inverse-folding log-likelihoods into a profile in
/// canonical column order. A missing gap column is filled with 0.
inline Profile if_logits_to_profile(const LogitsTable& t) {
  if (t.source != LogitsSource::inverse_folding)
    fail("if_logits_to_profile: expected source=inverse_folding, got " + to_string(t.source));
  if (t.alphabet.size() != 20 && t.alphabet.size() != 21)
    fail("if_logits_to_profile: alphabet must have 20 or 21 symbols");
  validate(t);
  Profile p;
  p.matrix = Matrix(t.values.rows, kNumCols);
  for (std::size_t i = 0; i < t.values.rows; ++i) {
    for (std::size_t c = 0; c < t.alphabet.size(); ++c)
      p.matrix(i, static_cast<std::size_t>(aa_index(t.alphabet[c]))) = std::exp(t.values(i, c));
    // Summing in canonical order makes the result independent of the file's column order.
    double sum = 0.0;
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumCols); ++j) sum += p.matrix(i, j);
    for (std::size_t j = 0; j < static_cast<std::size_t>(kNumCols); ++j) p.matrix(i, j) /= sum;
  }
  return p;
}

inline constexpr double kDefaultProbabilityFloor = 1e-8;

/// log(max(p, floor)) of every entry, tagged as a toy-source table.
inline LogitsTable profile_to_logits(const Profile& p, double floor = kDefaultProbabilityFloor) {
  LogitsTable t;
  t.source = LogitsSource::toy;
  t.alphabet = std::string(kProfileAlphabet);
  t.values = Matrix(p.matrix.rows, p.matrix.cols);
  for (std::size_t k = 0; k < p.matrix.data.size(); ++k) t.values.data[k] = std::log(std::max(p.matrix.data[k], floor));
  return t;
}

inline std::string write_profile(const Profile& p) {
  return write_matrix_file({"profile", "prob", std::string(kProfileAlphabet), p.matrix});
}

inline Profile read_profile(std::string_view text) {
  MatrixFile f = read_matrix_file(text);
  if (f.source != "profile" || f.space != "prob") fail("profile file must have source=profile space=prob");
  if (f.alphabet != kProfileAlphabet) fail("profile file must use alphabet " + std::string(kProfileAlphabet));
  Profile p{std::move(f.values)};
  validate(p);
  return p;
}

}  // namespace evofit
