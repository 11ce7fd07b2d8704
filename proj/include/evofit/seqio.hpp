// Readers and writers for every text format the pipeline consumes:
// FASTA, A3M alignments, a PDB backbone subset, mutant strings, assay
// tables and the shared matrix container (logits, profiles, embeddings).
#pragma once

#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evofit/common.hpp"

namespace evofit {

using Vec3 = std::array<double, 3>;

struct ResidueFrame {
  Vec3 n{};
  Vec3 ca{};
  Vec3 c{};
};

struct ProteinRecord {
  std::string id;
  std::string sequence;
  std::vector<ResidueFrame> backbone;

  std::size_t length() const { return sequence.size(); }
};

/// Throws unless the record satisfies the length, alphabet and
/// finiteness invariants.
inline void validate(const ProteinRecord& rec) {
  if (rec.sequence.size() != rec.backbone.size())
    fail("protein '" + rec.id + "': sequence length " + std::to_string(rec.sequence.size()) +
         " != backbone length " + std::to_string(rec.backbone.size()));
  for (std::size_t i = 0; i < rec.sequence.size(); ++i)
    if (!is_amino_acid(rec.sequence[i]))
      fail("protein '" + rec.id + "': non-canonical residue '" + std::string(1, rec.sequence[i]) +
           "' at position " + std::to_string(i + 1));
  for (std::size_t i = 0; i < rec.backbone.size(); ++i)
    for (const Vec3* p : {&rec.backbone[i].n, &rec.backbone[i].ca, &rec.backbone[i].c})
      for (double v : *p)
        if (!std::isfinite(v))
          fail("protein '" + rec.id + "': non-finite coordinate at residue " + std::to_string(i + 1));
}

// ---------------------------------------------------------------- FASTA

struct FastaRecord {
  std::string id;
  std::string sequence;
  bool operator==(const FastaRecord&) const = default;
};

inline std::vector<FastaRecord> parse_fasta(std::string_view text) {
  std::vector<FastaRecord> out;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = trim(lines[ln]);
    if (line.empty()) continue;
    if (line.front() == '>') {
      std::string_view header = trim(line.substr(1));
      std::string_view id = header.substr(0, header.find_first_of(" \t"));
      if (id.empty()) fail("FASTA line " + std::to_string(ln + 1) + ": header with empty id");
      out.push_back({std::string(id), {}});
      continue;
    }
    if (out.empty()) fail("FASTA line " + std::to_string(ln + 1) + ": sequence before first header");
    for (char ch : line) {
      if (std::isspace(static_cast<unsigned char>(ch))) continue;
      const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (!is_amino_acid(up))
        fail("FASTA line " + std::to_string(ln + 1) + ": " + std::string(1, ch) + " not canonical");
      out.back().sequence.push_back(up);
    }
  }
  if (out.empty()) fail("FASTA input is empty");
  return out;
}

inline std::string write_fasta(const std::vector<FastaRecord>& records, std::size_t width = 60) {
  std::string out;
  for (const auto& r : records) {
    out += ">" + r.id + "\n";
    for (std::size_t i = 0; i < r.sequence.size(); i += width)
      out += r.sequence.substr(i, width) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- A3M

struct Alignment {
  std::string query;
  std::vector<std::string> rows;  // rows[0] == query

  std::size_t length() const { return query.size(); }
  std::size_t depth() const { return rows.size(); }
};

/// Parses A3M text: lowercase insertion states are dropped, then every
/// row is right-padded with '-' or truncated to exactly `query_length`.
inline Alignment parse_a3m(std::string_view text, std::size_t query_length) {
  std::vector<std::string> raw;
  std::vector<std::size_t> first_line;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '>') {
      raw.emplace_back();
      first_line.push_back(ln + 1);
      continue;
    }
    if (raw.empty()) fail("A3M line " + std::to_string(ln + 1) + ": sequence before first header");
    for (char ch : line) {
      if (std::isspace(static_cast<unsigned char>(ch))) continue;
      if (std::islower(static_cast<unsigned char>(ch))) {
        if (!is_amino_acid(static_cast<char>(std::toupper(static_cast<unsigned char>(ch)))))
          fail("A3M line " + std::to_string(ln + 1) + ": invalid insertion '" + std::string(1, ch) + "'");
        continue;  // insertion relative to the query
      }
      if (aa_index(ch) < 0)
        fail("A3M line " + std::to_string(ln + 1) + ": invalid character '" + std::string(1, ch) + "'");
      raw.back().push_back(ch);
    }
  }
  if (raw.empty()) fail("A3M input is empty");

  std::string query;
  for (char ch : raw.front())
    if (ch != '-') query.push_back(ch);
  if (query.size() != query_length)
    fail("A3M query has ungapped length " + std::to_string(query.size()) + ", expected " +
         std::to_string(query_length));

  Alignment aln;
  aln.query = query;
  aln.rows.push_back(query);
  for (std::size_t r = 1; r < raw.size(); ++r) {
    std::string row = raw[r];
    row.resize(query_length, '-');
    aln.rows.push_back(std::move(row));
  }
  return aln;
}

// ---------------------------------------------------------------- backbone (PDB subset)

inline char three_to_one(std::string_view name) {
  static const std::map<std::string, char, std::less<>> table = {
      {"ALA", 'A'}, {"CYS", 'C'}, {"ASP", 'D'}, {"GLU", 'E'}, {"PHE", 'F'}, {"GLY", 'G'},
      {"HIS", 'H'}, {"ILE", 'I'}, {"LYS", 'K'}, {"LEU", 'L'}, {"MET", 'M'}, {"ASN", 'N'},
      {"PRO", 'P'}, {"GLN", 'Q'}, {"ARG", 'R'}, {"SER", 'S'}, {"THR", 'T'}, {"VAL", 'V'},
      {"TRP", 'W'}, {"TYR", 'Y'}, {"MSE", 'M'}};
  auto it = table.find(name);
  return it == table.end() ? '\0' : it->second;
}

inline std::string one_to_three(char aa) {
  static constexpr std::array<const char*, 20> names = {
      "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU",
      "MET", "ASN", "PRO", "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR"};
  const int i = aa_index(aa);
  if (i < 0 || i >= kNumAA) fail("no residue name for '" + std::string(1, aa) + "'");
  return names[static_cast<std::size_t>(i)];
}

/// Reads ATOM records (and HETATM for MSE) of a single-chain file. Only N,
/// CA and C are kept; for alternate locations the first occurrence wins.
inline ProteinRecord parse_backbone(std::string_view text, std::string id = {}) {
  struct Pending {
    int seq_num;
    char aa;
    std::optional<Vec3> n, ca, c;
  };
  std::vector<Pending> residues;
  std::optional<char> chain;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    const std::string where = "backbone line " + std::to_string(ln + 1);
    if (line.rfind("HEADER", 0) == 0 && id.empty() && line.size() >= 66) {
      id = std::string(trim(std::string_view(line).substr(62, 4)));
      continue;
    }
    const bool is_atom = line.rfind("ATOM  ", 0) == 0;
    const bool is_het = line.rfind("HETATM", 0) == 0;
    if (!is_atom && !is_het) {
      if (line.rfind("ENDMDL", 0) == 0) break;
      continue;
    }
    if (line.size() < 54) fail(where + ": ATOM record too short");
    const std::string res_name(trim(std::string_view(line).substr(17, 3)));
    if (is_het && res_name != "MSE") continue;
    const std::string atom(trim(std::string_view(line).substr(12, 4)));
    const char chain_id = line[21];
    if (chain && *chain != chain_id) fail(where + ": multiple chains are not supported");
    chain = chain_id;
    if (line[26] != ' ') fail(where + ": insertion codes are not supported");
    const int seq_num = static_cast<int>(parse_long(trim(std::string_view(line).substr(22, 4)), where));
    const char aa = three_to_one(res_name);
    if (aa == '\0') fail(where + ": unknown residue name '" + res_name + "'");

    if (residues.empty() || residues.back().seq_num != seq_num) {
      if (!residues.empty() && seq_num <= residues.back().seq_num)
        fail(where + ": non-monotonic residue numbering (" + std::to_string(seq_num) + " after " +
             std::to_string(residues.back().seq_num) + ")");
      residues.push_back({seq_num, aa, {}, {}, {}});
    }
    Pending& res = residues.back();
    std::optional<Vec3>* slot = nullptr;
    if (atom == "N") slot = &res.n;
    else if (atom == "CA") slot = &res.ca;
    else if (atom == "C") slot = &res.c;
    if (slot == nullptr || slot->has_value()) continue;
    Vec3 xyz{parse_double(trim(std::string_view(line).substr(30, 8)), where),
             parse_double(trim(std::string_view(line).substr(38, 8)), where),
             parse_double(trim(std::string_view(line).substr(46, 8)), where)};
    *slot = xyz;
  }
  if (residues.empty()) fail("backbone file has no ATOM records");

  ProteinRecord rec;
  rec.id = id.empty() ? "protein" : id;
  for (std::size_t i = 0; i < residues.size(); ++i) {
    const Pending& r = residues[i];
    const char* missing = !r.n ? "N" : !r.ca ? "CA" : !r.c ? "C" : nullptr;
    if (missing)
      fail("residue " + std::to_string(i + 1) + " (" + std::to_string(r.seq_num) + ") is missing backbone atom " +
           missing);
    rec.sequence.push_back(r.aa);
    rec.backbone.push_back({*r.n, *r.ca, *r.c});
  }
  validate(rec);
  return rec;
}

/// Writes the same PDB subset parse_backbone reads; coordinates use the
/// fixed %8.3f columns of the PDB format.
inline std::string write_backbone(const ProteinRecord& rec) {
  std::string out;
  char buf[100];
  if (!rec.id.empty() && rec.id.size() <= 4) {
    std::snprintf(buf, sizeof buf, "HEADER    %-40s%-12s%-4s\n", "SYNTHETIC BACKBONE", "", rec.id.c_str());
    out += buf;
  }
  int serial = 1;
  for (std::size_t i = 0; i < rec.backbone.size(); ++i) {
    const std::string res = one_to_three(rec.sequence[i]);
    const std::array<std::pair<const char*, const Vec3*>, 3> atoms = {
        {{"N", &rec.backbone[i].n}, {"CA", &rec.backbone[i].ca}, {"C", &rec.backbone[i].c}}};
    for (const auto& [name, p] : atoms) {
      std::snprintf(buf, sizeof buf, "ATOM  %5d  %-3s %3s A%4d    %8.3f%8.3f%8.3f  1.00  0.00           %c\n",
                    serial++, name, res.c_str(), static_cast<int>(i + 1), (*p)[0], (*p)[1], (*p)[2], name[0]);
      out += buf;
    }
  }
  out += "END\n";
  return out;
}

// ---------------------------------------------------------------- mutations

struct Substitution {
  int position = 0;  // 1-based
  char wt = 'A';
  char mt = 'A';
  bool operator==(const Substitution&) const = default;
};

struct MutationSet {
  std::vector<Substitution> substitutions;

  bool empty() const { return substitutions.empty(); }
  std::size_t size() const { return substitutions.size(); }
  bool operator==(const MutationSet&) const = default;

  /// Sorted mutated positions; the cache key for masked forward passes.
  std::vector<int> positions() const {
    std::vector<int> p;
    for (const auto& s : substitutions) p.push_back(s.position);
    std::sort(p.begin(), p.end());
    return p;
  }
};

inline std::string to_string(const MutationSet& m) {
  std::string out;
  for (std::size_t i = 0; i < m.substitutions.size(); ++i) {
    if (i) out += ':';
    const auto& s = m.substitutions[i];
    out += s.wt + std::to_string(s.position) + s.mt;
  }
  return out;
}

inline MutationSet parse_mutant_string(std::string_view s) {
  MutationSet m;
  if (trim(s).empty()) fail("empty mutant string");
  std::set<int> seen;
  for (const auto& tok_raw : split(trim(s), ':')) {
    const std::string_view tok = trim(tok_raw);
    const std::string where = "mutant token '" + std::string(tok) + "'";
    if (tok.size() < 3) fail(where + ": malformed");
    const char wt = tok.front();
    const char mt = tok.back();
    const std::string_view digits = tok.substr(1, tok.size() - 2);
    if (!is_amino_acid(wt) || !is_amino_acid(mt)) fail(where + ": malformed");
    for (char ch : digits)
      if (!std::isdigit(static_cast<unsigned char>(ch)) && ch != '-') fail(where + ": malformed");
    const long pos = parse_long(digits, where);
    if (pos < 1) fail(where + ": position must be >= 1");
    if (wt == mt) fail(where + ": silent mutation");
    if (!seen.insert(static_cast<int>(pos)).second) fail(where + ": duplicate position");
    m.substitutions.push_back({static_cast<int>(pos), wt, mt});
  }
  return m;
}

/// Throws unless every substitution is in range and its wild-type letter
/// matches `wt_sequence` (1-based positions, no offset).
inline void check_against(const MutationSet& m, std::string_view wt_sequence) {
  for (const auto& s : m.substitutions) {
    if (s.position < 1 || static_cast<std::size_t>(s.position) > wt_sequence.size())
      fail("mutation " + to_string(MutationSet{{s}}) + ": position out of range for length " +
           std::to_string(wt_sequence.size()));
    if (wt_sequence[static_cast<std::size_t>(s.position - 1)] != s.wt)
      fail("mutation " + to_string(MutationSet{{s}}) + ": wild-type mismatch (sequence has '" +
           std::string(1, wt_sequence[static_cast<std::size_t>(s.position - 1)]) + "')");
  }
}

// ---------------------------------------------------------------- assay tables

struct AssayRecord {
  std::string mutant_text;
  MutationSet mutant;
  double dms_score = 0.0;
  std::optional<int> dms_bin;
  std::map<std::string, std::string> tags;
};

struct AssayTable {
  std::vector<std::string> tag_columns;
  std::vector<AssayRecord> rows;
};

inline AssayTable parse_assay_table(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) fail("assay table is empty");
  const auto header = split(lines[0], '\t');
  if (header.size() < 3 || header[0] != "mutant" || header[1] != "DMS_score" || header[2] != "DMS_score_bin")
    fail("assay table header must start with mutant\\tDMS_score\\tDMS_score_bin");
  AssayTable table;
  table.tag_columns.assign(header.begin() + 3, header.end());
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const std::string where = "assay row " + std::to_string(ln);
    const auto cols = split(lines[ln], '\t');
    if (cols.size() != header.size())
      fail(where + ": expected " + std::to_string(header.size()) + " columns, got " + std::to_string(cols.size()));
    AssayRecord rec;
    rec.mutant_text = std::string(trim(cols[0]));
    if (rec.mutant_text.empty()) fail(where + ": empty mutant");
    try {
      rec.mutant = parse_mutant_string(rec.mutant_text);
    } catch (const Error& e) {
      fail(where + ": " + e.what());
    }
    rec.dms_score = parse_double(trim(cols[1]), where + " DMS_score");
    if (!std::isfinite(rec.dms_score)) fail(where + ": DMS_score not finite");
    const std::string_view bin = trim(cols[2]);
    if (!bin.empty()) {
      if (bin != "0" && bin != "1") fail(where + ": DMS_score_bin must be 0, 1 or empty");
      rec.dms_bin = bin == "1" ? 1 : 0;
    }
    for (std::size_t c = 3; c < cols.size(); ++c) {
      const std::string value(trim(cols[c]));
      if (!value.empty()) rec.tags[header[c]] = value;
    }
    auto depth = rec.tags.find("mutation_depth");
    if (depth != rec.tags.end() && parse_long(depth->second, where) != static_cast<long>(rec.mutant.size()))
      fail(where + ": mutation_depth tag disagrees with the mutant");
    table.rows.push_back(std::move(rec));
  }
  return table;
}

inline std::string write_assay_table(const AssayTable& table) {
  std::string out = "mutant\tDMS_score\tDMS_score_bin";
  for (const auto& t : table.tag_columns) out += "\t" + t;
  out += "\n";
  for (const auto& r : table.rows) {
    out += r.mutant_text + "\t" + format_double(r.dms_score) + "\t";
    if (r.dms_bin) out += std::to_string(*r.dms_bin);
    for (const auto& t : table.tag_columns) {
      auto it = r.tags.find(t);
      out += "\t" + (it == r.tags.end() ? std::string() : it->second);
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------- matrix container

/// The shared text container:
///   #logits v1 source=<tag> [space=<log|prob|raw>] alphabet=<chars> | dim=<d>
///   #length <L>
///   L lines of tab-separated %.17g values
struct MatrixFile {
  std::string source;
  std::string space = "log";
  std::string alphabet;  // empty for space=raw
  Matrix values;
};

inline MatrixFile read_matrix_file(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.size() < 2) fail("matrix file: missing header");
  const auto head = split(lines[0], ' ');
  if (head.size() < 3 || head[0] != "#logits" || head[1] != "v1") fail("matrix file: bad header line");
  MatrixFile f;
  std::optional<std::size_t> dim;
  for (std::size_t i = 2; i < head.size(); ++i) {
    const auto eq = head[i].find('=');
    if (eq == std::string::npos) fail("matrix file: bad header field '" + head[i] + "'");
    const std::string key = head[i].substr(0, eq);
    const std::string value = head[i].substr(eq + 1);
    if (key == "source") f.source = value;
    else if (key == "space") f.space = value;
    else if (key == "alphabet") f.alphabet = value;
    else if (key == "dim") dim = static_cast<std::size_t>(parse_long(value, "matrix file dim"));
    else fail("matrix file: unknown header field '" + key + "'");
  }
  if (f.source.empty()) fail("matrix file: missing source");
  if (f.space != "log" && f.space != "prob" && f.space != "raw") fail("matrix file: unknown space '" + f.space + "'");
  if (f.space == "raw" ? !dim : f.alphabet.empty()) fail("matrix file: missing alphabet/dim");
  const std::size_t cols = f.space == "raw" ? *dim : f.alphabet.size();
  if (lines[1].rfind("#length ", 0) != 0) fail("matrix file: missing #length line");
  const auto length = parse_long(trim(std::string_view(lines[1]).substr(8)), "matrix file length");
  if (length < 0) fail("matrix file: negative length");
  const std::size_t rows = static_cast<std::size_t>(length);
  if (lines.size() - 2 != rows)
    fail("matrix file: declared length " + std::to_string(rows) + " but found " + std::to_string(lines.size() - 2) +
         " rows");
  f.values = Matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto fields = split(lines[r + 2], '\t');
    const std::string where = "matrix file row " + std::to_string(r + 1);
    if (fields.size() != cols)
      fail(where + ": expected " + std::to_string(cols) + " values, got " + std::to_string(fields.size()));
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = parse_double(fields[c], where);
      if (std::isnan(v) || (f.space != "log" && !std::isfinite(v))) fail(where + ": non-finite value");
      f.values(r, c) = v;
    }
  }
  return f;
}

inline std::string write_matrix_file(const MatrixFile& f) {
  std::string out = "#logits v1 source=" + f.source;
  if (f.space != "log") out += " space=" + f.space;
  if (f.space == "raw") out += " dim=" + std::to_string(f.values.cols);
  else out += " alphabet=" + f.alphabet;
  out += "\n#length " + std::to_string(f.values.rows) + "\n";
  for (std::size_t r = 0; r < f.values.rows; ++r) {
    for (std::size_t c = 0; c < f.values.cols; ++c) {
      if (c) out += '\t';
      out += format_double(f.values(r, c));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------- logits tables

enum class LogitsSource { plm, inverse_folding, toy };

inline std::string to_string(LogitsSource s) {
  switch (s) {
    case LogitsSource::plm: return "plm";
    case LogitsSource::inverse_folding: return "inverse_folding";
    case LogitsSource::toy: return "toy";
  }
  return "toy";
}

inline LogitsSource parse_logits_source(std::string_view s) {
  if (s == "plm") return LogitsSource::plm;
  if (s == "inverse_folding") return LogitsSource::inverse_folding;
  if (s == "toy") return LogitsSource::toy;
  fail("unknown logits source '" + std::string(s) + "'");
}

/// Per-position log-probabilities over `alphabet`.
struct LogitsTable {
  LogitsSource source = LogitsSource::toy;
  std::string alphabet{kProfileAlphabet};
  Matrix values;

  bool operator==(const LogitsTable&) const = default;
};

inline constexpr double kLogitsRowTolerance = 1e-6;

inline void validate(const LogitsTable& t) {
  if (t.alphabet.size() != t.values.cols)
    fail("logits: alphabet has " + std::to_string(t.alphabet.size()) + " symbols but rows have " +
         std::to_string(t.values.cols) + " values");
  std::set<char> seen;
  for (char ch : t.alphabet) {
    if (aa_index(ch) < 0) fail("logits: alphabet symbol '" + std::string(1, ch) + "' is not canonical");
    if (!seen.insert(ch).second) fail("logits: duplicate alphabet symbol '" + std::string(1, ch) + "'");
  }
  for (std::size_t r = 0; r < t.values.rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < t.values.cols; ++c) sum += std::exp(t.values(r, c));
    if (!(std::abs(sum - 1.0) <= kLogitsRowTolerance))
      fail("logits row " + std::to_string(r + 1) + ": exp-sum " + format_double(sum) + " is not 1");
  }
}

inline LogitsTable read_logits(std::string_view text) {
  MatrixFile f = read_matrix_file(text);
  if (f.space != "log") fail("logits file must be in log space");
  LogitsTable t{parse_logits_source(f.source), f.alphabet, std::move(f.values)};
  validate(t);
  return t;
}

inline std::string write_logits(const LogitsTable& t) {
  return write_matrix_file({to_string(t.source), "log", t.alphabet, t.values});
}

/// Frozen per-residue embeddings (the pLM features that seed the encoder).
inline Matrix read_embedding(std::string_view text) {
  MatrixFile f = read_matrix_file(text);
  if (f.source != "embedding" || f.space != "raw") fail("embedding file must have source=embedding space=raw");
  return std::move(f.values);
}

inline std::string write_embedding(const Matrix& m) { return write_matrix_file({"embedding", "raw", "", m}); }

}  // namespace evofit
