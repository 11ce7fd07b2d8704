// Sequence-structure encoder: a k-nearest-neighbour residue graph with
// RBF distance features, geometric vector perceptron message passing, and
// a linear head over the final scalar channels.
//
// Vector features are stored as (3N x C) tensors: the three rows 3i..3i+2
// hold the x, y, z components of node (or edge) i for every channel. A
// channel-mixing matmul therefore acts identically on each coordinate, so
// any rotation of the input commutes with it. Scalars only ever see vector
// norms, which keeps the scalar path rotation invariant.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "evofit/autodiff.hpp"
#include "evofit/common.hpp"
#include "evofit/seqio.hpp"

namespace evofit {

struct EncoderConfig {
  std::size_t num_layers = 3;
  std::size_t scalar_dim = 64;
  std::size_t vector_dim = 16;
  std::size_t k_neighbors = 8;
  std::size_t num_rbf = 16;
  double rbf_min = 0.0;
  double rbf_max = 20.0;
};

inline void validate(const EncoderConfig& c) {
  if (c.num_layers == 0 || c.scalar_dim == 0 || c.vector_dim == 0 || c.k_neighbors == 0 || c.num_rbf == 0)
    fail("encoder config: all sizes must be positive");
  if (!(c.rbf_min < c.rbf_max)) fail("encoder config: rbf_min must be < rbf_max");
}

/// Gaussian RBF expansion with centres evenly spaced over [min, max] and
/// width (max - min) / count.
inline std::vector<double> rbf_features(double dist, const EncoderConfig& c) {
  std::vector<double> out(c.num_rbf);
  const double sigma = (c.rbf_max - c.rbf_min) / static_cast<double>(c.num_rbf);
  for (std::size_t m = 0; m < c.num_rbf; ++m) {
    const double mu = c.num_rbf == 1 ? c.rbf_min
                                     : c.rbf_min + (c.rbf_max - c.rbf_min) * static_cast<double>(m) /
                                                       static_cast<double>(c.num_rbf - 1);
    const double z = (dist - mu) / sigma;
    out[m] = std::exp(-z * z);
  }
  return out;
}

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Directed edges j -> i, grouped by destination i in ascending order and,
/// within a destination, by increasing distance (ties: lower index first).
struct ResidueGraph {
  std::size_t num_nodes = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  Matrix edge_scalars;             // E x num_rbf
  std::vector<Vec3> edge_vectors;  // unit CA_j - CA_i
  Matrix node_scalars;             // N x scalar_dim, filled by init_nodes

  std::size_t num_edges() const { return src.size(); }
};

inline ResidueGraph build_graph(const ProteinRecord& rec, const EncoderConfig& cfg) {
  validate(cfg);
  const std::size_t L = rec.backbone.size();
  if (L < 2) fail("build_graph: need at least 2 residues");
  const std::size_t k = std::min(cfg.k_neighbors, L - 1);
  ResidueGraph g;
  g.num_nodes = L;
  g.edge_scalars = Matrix(L * k, cfg.num_rbf);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < L; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < L; ++j) {
      if (j == i) continue;
      const double d = distance(rec.backbone[i].ca, rec.backbone[j].ca);
      if (d == 0.0)
        fail("build_graph: residues " + std::to_string(i + 1) + " and " + std::to_string(j + 1) +
             " have coincident CA atoms");
      cand.emplace_back(d, j);
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t r = 0; r < k; ++r) {
      const auto [d, j] = cand[r];
      const std::size_t e = g.src.size();
      g.src.push_back(j);
      g.dst.push_back(i);
      const auto rbf = rbf_features(d, cfg);
      std::copy(rbf.begin(), rbf.end(), &g.edge_scalars.data[e * cfg.num_rbf]);
      const Vec3& a = rec.backbone[i].ca;
      const Vec3& b = rec.backbone[j].ca;
      g.edge_vectors.push_back({(b[0] - a[0]) / d, (b[1] - a[1]) / d, (b[2] - a[2]) / d});
    }
  }
  return g;
}

// ---------------------------------------------------------------- node features

inline constexpr int kMaskToken = 20;  // token ids 0..19 are residues
inline constexpr int kBoundaryToken = 21;
inline constexpr std::size_t kToyVocab = 22;

inline std::vector<int> tokenize(std::string_view seq) {
  std::vector<int> t;
  for (char c : seq) {
    const int i = aa_index(c);
    if (i < 0 || i >= kNumAA) fail("tokenize: non-canonical residue '" + std::string(1, c) + "'");
    t.push_back(i);
  }
  return t;
}

/// Frozen stand-in for pLM embeddings: a fixed seeded random projection of
/// the one-hot window (left neighbour, residue, right neighbour).
struct ToyEmbedder {
  std::size_t dim = 64;
  std::uint64_t seed = 7;

  Matrix projection() const {
    Matrix p(3 * kToyVocab, dim);
    Rng rng(seed);
    const double s = 1.0 / std::sqrt(3.0);
    for (auto& v : p.data) v = s * rng.normal();
    return p;
  }

  Matrix embed(const std::vector<int>& tokens) const {
    const Matrix p = projection();
    const std::size_t L = tokens.size();
    Matrix out(L, dim);
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t window[3] = {
          i == 0 ? kBoundaryToken : static_cast<std::size_t>(tokens[i - 1]),
          static_cast<std::size_t>(tokens[i]),
          i + 1 == L ? kBoundaryToken : static_cast<std::size_t>(tokens[i + 1])};
      for (std::size_t w = 0; w < 3; ++w) {
        const std::size_t row = w * kToyVocab + window[w];
        for (std::size_t c = 0; c < dim; ++c) out(i, c) += p(row, c);
      }
    }
    return out;
  }
};

/// Sets h^(0) scalars to the given embedding; vector channels start at zero.
inline void init_nodes(ResidueGraph& g, const Matrix& embedding, const EncoderConfig& cfg) {
  if (embedding.rows != g.num_nodes)
    fail("init_nodes: embedding has " + std::to_string(embedding.rows) + " rows for " +
         std::to_string(g.num_nodes) + " residues");
  if (embedding.cols != cfg.scalar_dim)
    fail("init_nodes: embedding dimension " + std::to_string(embedding.cols) + " != encoder scalar_dim " +
         std::to_string(cfg.scalar_dim));
  g.node_scalars = embedding;
}

// ---------------------------------------------------------------- GVP

struct GvpShape {
  std::size_t s_in, v_in, s_out, v_out;
  std::size_t hidden() const { return std::max(v_in, v_out); }
};

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0) {
  Tensor t({rows, cols});
  const double s = gain / std::sqrt(static_cast<double>(rows));
  for (auto& v : t.data) v = s * rng.normal();
  return t;
}

inline void add_gvp_params(ParamStore& store, const std::string& prefix, const GvpShape& sh, Rng& rng) {
  const std::size_t h = sh.hidden();
  store.add(prefix + ".Wh", random_matrix(sh.v_in, h, rng));
  store.add(prefix + ".Wu", random_matrix(h, sh.v_out, rng));
  store.add(prefix + ".Ws", random_matrix(sh.s_in + h, sh.s_out, rng));
  store.add(prefix + ".bs", Tensor({sh.s_out}, 0.0));
  store.add(prefix + ".Wg", random_matrix(sh.s_out, sh.v_out, rng));
  store.add(prefix + ".bg", Tensor({sh.v_out}, 0.0));
}

struct GvpFeatures {
  Var s;  // N x s
  Var v;  // 3N x v
};

/// One geometric vector perceptron. With activations, scalars pass through
/// ReLU and each output vector channel is scaled by a sigmoid gate computed
/// from the output scalars. Without, both outputs are linear.
inline GvpFeatures gvp(Tape& tape, const ParamStore& params, const std::string& prefix, GvpFeatures in,
                       bool activations) {
  Var Wh = tape.param(params, prefix + ".Wh");
  Var Wu = tape.param(params, prefix + ".Wu");
  Var Ws = tape.param(params, prefix + ".Ws");
  Var bs = tape.param(params, prefix + ".bs");
  Var vh = matmul(in.v, Wh);
  Var vu = matmul(vh, Wu);
  Var s = add_bias(matmul(concat_cols({in.s, l2_norm_vectors(vh)}), Ws), bs);
  if (!activations) return {s, vu};
  s = relu(s);
  Var gate = sigmoid(add_bias(matmul(s, tape.param(params, prefix + ".Wg")), tape.param(params, prefix + ".bg")));
  return {s, mul(vu, repeat_rows(gate, 3))};
}

// ---------------------------------------------------------------- encoder

inline ParamStore& add_encoder_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
  validate(cfg);
  const std::size_t d = cfg.scalar_dim, dv = cfg.vector_dim;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "gvp.l" + std::to_string(l);
    add_gvp_params(store, p + ".msg1", {d + cfg.num_rbf, dv + 1, d, dv}, rng);
    add_gvp_params(store, p + ".msg2", {d, dv, d, dv}, rng);
    add_gvp_params(store, p + ".ff1", {d, dv, d, dv}, rng);
    add_gvp_params(store, p + ".ff2", {d, dv, d, dv}, rng);
  }
  store.add("head.W", random_matrix(d, kNumCols, rng));
  store.add("head.b", Tensor({static_cast<std::size_t>(kNumCols)}, 0.0));
  return store;
}

struct EncoderOutput {
  Var logits;                       // L x 21, pre-softmax head output
  Var probs;                        // P^S2F
  std::vector<GvpFeatures> layers;  // h^(l+1) for every layer
};

/// Message passing per layer:
///   h' = h + mean_{j in N(i)} GVP_msg(h_j, e_ji)
///   h'' = h' + GVP_ff(h')
/// then a linear head and a row softmax.
inline EncoderOutput encode(Tape& tape, const ResidueGraph& g, const ParamStore& params, const EncoderConfig& cfg) {
  const std::size_t L = g.num_nodes, E = g.num_edges();
  if (g.node_scalars.rows != L || g.node_scalars.cols != cfg.scalar_dim) fail("encode: node features not initialised");

  Var edge_s = tape.constant(Tensor::from_matrix(g.edge_scalars));
  Tensor ev({3 * E, 1});
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t k = 0; k < 3; ++k) ev.data[3 * e + k] = g.edge_vectors[e][k];
  Var edge_v = tape.constant(std::move(ev));

  std::vector<std::size_t> src_vec_rows(3 * E), dst_vec_rows(3 * E);
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t k = 0; k < 3; ++k) {
      src_vec_rows[3 * e + k] = 3 * g.src[e] + k;
      dst_vec_rows[3 * e + k] = 3 * g.dst[e] + k;
    }

  GvpFeatures h{tape.constant(Tensor::from_matrix(g.node_scalars)), tape.constant(Tensor({3 * L, cfg.vector_dim}, 0.0))};
  EncoderOutput out;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "gvp.l" + std::to_string(l);
    GvpFeatures msg{concat_cols({gather_rows(h.s, g.src), edge_s}), concat_cols({gather_rows(h.v, src_vec_rows), edge_v})};
    msg = gvp(tape, params, p + ".msg1", msg, true);
    msg = gvp(tape, params, p + ".msg2", msg, false);
    GvpFeatures half{add(h.s, scatter_mean(msg.s, g.dst, L)), add(h.v, scatter_mean(msg.v, dst_vec_rows, 3 * L))};
    GvpFeatures ff = gvp(tape, params, p + ".ff1", half, true);
    ff = gvp(tape, params, p + ".ff2", ff, false);
    h = {add(half.s, ff.s), add(half.v, ff.v)};
    out.layers.push_back(h);
  }
  out.logits = add_bias(matmul(h.s, tape.param(params, "head.W")), tape.param(params, "head.b"));
  out.probs = softmax_rows(out.logits);
  return out;
}

}  // namespace evofit
