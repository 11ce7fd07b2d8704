// Transition blocks and the additive multi-source fusion
//   P_final = softmax(P_S2F + T_struct(P_struct) + T_if(P_if)).
#pragma once

#include <optional>
#include <string>

#include "evofit/autodiff.hpp"
#include "evofit/gvp.hpp"

namespace evofit {

struct TransitionConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn = 128;
};

inline void validate(const TransitionConfig& c) {
  if (c.d_model == 0 || c.heads == 0 || c.ffn == 0) fail("transition config: sizes must be positive");
  if (c.d_model % c.heads != 0) fail("transition config: d_model must be divisible by heads");
}

/// The output projection starts at zero, so a fresh block contributes
/// nothing and fusion begins at the pure encoder distribution.
inline void add_transition_params(ParamStore& store, const std::string& prefix, const TransitionConfig& c, Rng& rng) {
  validate(c);
  const std::size_t d = c.d_model, A = kNumCols;
  store.add(prefix + ".in.W", random_matrix(A, d, rng));
  store.add(prefix + ".in.b", Tensor({d}, 0.0));
  store.add(prefix + ".attn.Wq", random_matrix(d, d, rng));
  store.add(prefix + ".attn.Wk", random_matrix(d, d, rng));
  store.add(prefix + ".attn.Wv", random_matrix(d, d, rng));
  store.add(prefix + ".attn.Wo", random_matrix(d, d, rng));
  store.add(prefix + ".ln1.g", Tensor({d}, 1.0));
  store.add(prefix + ".ln1.b", Tensor({d}, 0.0));
  store.add(prefix + ".ffn.W1", random_matrix(d, c.ffn, rng));
  store.add(prefix + ".ffn.b1", Tensor({c.ffn}, 0.0));
  store.add(prefix + ".ffn.W2", random_matrix(c.ffn, d, rng));
  store.add(prefix + ".ffn.b2", Tensor({d}, 0.0));
  store.add(prefix + ".ln2.g", Tensor({d}, 1.0));
  store.add(prefix + ".ln2.b", Tensor({d}, 0.0));
  store.add(prefix + ".out.W", Tensor({d, A}, 0.0));
  store.add(prefix + ".out.b", Tensor({A}, 0.0));
}

/// One post-norm transformer layer over positions, without positional
/// encoding: L x 21 in, unconstrained L x 21 out.
inline Var transition(Tape& tape, const ParamStore& params, const std::string& prefix, Var input,
                      const TransitionConfig& c) {
  validate(c);
  if (input.value().rank() != 2 || input.cols() != static_cast<std::size_t>(kNumCols))
    fail("transition: input must be L x 21, got " + shape_string(input.shape()));
  auto P = [&](const char* name) { return tape.param(params, prefix + name); };
  Var x = add_bias(matmul(input, P(".in.W")), P(".in.b"));

  Var q = matmul(x, P(".attn.Wq"));
  Var k = matmul(x, P(".attn.Wk"));
  Var v = matmul(x, P(".attn.Wv"));
  const std::size_t dh = c.d_model / c.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < c.heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var weights = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(weights, vh));
  }
  Var attn = matmul(concat_cols(heads), P(".attn.Wo"));
  Var x1 = add_bias(mul_row(layer_norm_rows(add(x, attn)), P(".ln1.g")), P(".ln1.b"));
  Var f = add_bias(matmul(relu(add_bias(matmul(x1, P(".ffn.W1")), P(".ffn.b1"))), P(".ffn.W2")), P(".ffn.b2"));
  Var x2 = add_bias(mul_row(layer_norm_rows(add(x1, f)), P(".ln2.g")), P(".ln2.b"));
  return add_bias(matmul(x2, P(".out.W")), P(".out.b"));
}

inline const std::string kStructBlock = "trans.struct";
inline const std::string kIfBlock = "trans.if";

struct FusionOptions {
  TransitionConfig transition;
  // Off: the encoder's probabilities are summed as-is. On: log P_S2F.
  bool log_space = false;
};

/// Absent sources contribute zero.
inline Var fuse(Tape& tape, const ParamStore& params, Var p_s2f, std::optional<Var> p_struct, std::optional<Var> p_if,
                const FusionOptions& opts) {
  for (const auto& src : {p_struct, p_if})
    if (src && src->shape() != p_s2f.shape())
      fail("fuse: source shape " + shape_string(src->shape()) + " does not match " + shape_string(p_s2f.shape()));
  Var total = opts.log_space ? log(p_s2f) : p_s2f;
  if (p_struct) total = add(total, transition(tape, params, kStructBlock, *p_struct, opts.transition));
  if (p_if) total = add(total, transition(tape, params, kIfBlock, *p_if, opts.transition));
  return softmax_rows(total);
}

}  // namespace evofit
