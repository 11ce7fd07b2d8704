// The full fused model: encoder probabilities plus transition-processed
// structure and inverse-folding profiles. Frozen inputs (embeddings,
// profiles) enter the tape as constants and never receive gradients.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evofit/autodiff.hpp"
#include "evofit/fusion.hpp"
#include "evofit/gvp.hpp"
#include "evofit/profile.hpp"
#include "evofit/seqio.hpp"

namespace evofit {

struct ModelConfig {
  EncoderConfig encoder;
  FusionOptions fusion;
  bool use_struct_profile = true;
  bool use_if_profile = true;
  std::uint64_t embedder_seed = 7;

  ToyEmbedder embedder() const { return {encoder.scalar_dim, embedder_seed}; }
};

inline std::map<std::string, std::string> to_meta(const ModelConfig& c) {
  auto b = [](bool v) { return std::string(v ? "1" : "0"); };
  return {
      {"num_layers", std::to_string(c.encoder.num_layers)},
      {"scalar_dim", std::to_string(c.encoder.scalar_dim)},
      {"vector_dim", std::to_string(c.encoder.vector_dim)},
      {"k_neighbors", std::to_string(c.encoder.k_neighbors)},
      {"num_rbf", std::to_string(c.encoder.num_rbf)},
      {"rbf_min", format_double(c.encoder.rbf_min)},
      {"rbf_max", format_double(c.encoder.rbf_max)},
      {"d_model", std::to_string(c.fusion.transition.d_model)},
      {"heads", std::to_string(c.fusion.transition.heads)},
      {"ffn", std::to_string(c.fusion.transition.ffn)},
      {"log_space", b(c.fusion.log_space)},
      {"use_struct_profile", b(c.use_struct_profile)},
      {"use_if_profile", b(c.use_if_profile)},
      {"embedder_seed", std::to_string(c.embedder_seed)},
  };
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  fail("'" + key + "': expected a boolean, got '" + v + "'");
}

/// Applies recognised keys from a key-value map; unknown keys are ignored
/// so the same map can carry training settings.
inline ModelConfig model_config_from(const std::map<std::string, std::string>& kv, ModelConfig c = {}) {
  auto size = [&](const char* key, std::size_t& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      const long v = parse_long(it->second, key);
      if (v <= 0) fail(std::string("'") + key + "' must be positive");
      out = static_cast<std::size_t>(v);
    }
  };
  auto real = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) out = parse_double(it->second, key);
  };
  auto flag = [&](const char* key, bool& out) {
    if (auto it = kv.find(key); it != kv.end()) out = parse_bool(it->second, key);
  };
  size("num_layers", c.encoder.num_layers);
  size("scalar_dim", c.encoder.scalar_dim);
  size("vector_dim", c.encoder.vector_dim);
  size("k_neighbors", c.encoder.k_neighbors);
  size("num_rbf", c.encoder.num_rbf);
  real("rbf_min", c.encoder.rbf_min);
  real("rbf_max", c.encoder.rbf_max);
  size("d_model", c.fusion.transition.d_model);
  size("heads", c.fusion.transition.heads);
  size("ffn", c.fusion.transition.ffn);
  flag("log_space", c.fusion.log_space);
  flag("use_struct_profile", c.use_struct_profile);
  flag("use_if_profile", c.use_if_profile);
  if (auto it = kv.find("embedder_seed"); it != kv.end())
    c.embedder_seed = static_cast<std::uint64_t>(parse_long(it->second, "embedder_seed"));
  validate(c.encoder);
  validate(c.fusion.transition);
  return c;
}

/// Fresh parameters: encoder, head, and one transition block per enabled
/// profile source. The config is recorded in the store's metadata.
inline ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  add_encoder_params(store, cfg.encoder, rng);
  if (cfg.use_struct_profile) add_transition_params(store, kStructBlock, cfg.fusion.transition, rng);
  if (cfg.use_if_profile) add_transition_params(store, kIfBlock, cfg.fusion.transition, rng);
  store.meta = to_meta(cfg);
  return store;
}

/// Everything the model sees about one protein, apart from its tokens.
struct ModelInput {
  ProteinRecord record;
  ResidueGraph graph;
  std::optional<Matrix> embedding;  // file-backed pLM features
  std::optional<Profile> struct_profile;
  std::optional<Profile> if_profile;
};

inline ModelInput prepare_input(ProteinRecord rec, const ModelConfig& cfg, std::optional<Matrix> embedding = {},
                                std::optional<Profile> struct_profile = {}, std::optional<Profile> if_profile = {}) {
  validate(rec);
  ModelInput in;
  in.graph = build_graph(rec, cfg.encoder);
  const std::size_t L = rec.length();
  if (embedding && (embedding->rows != L || embedding->cols != cfg.encoder.scalar_dim))
    fail("protein '" + rec.id + "': embedding is " + std::to_string(embedding->rows) + "x" +
         std::to_string(embedding->cols) + ", expected " + std::to_string(L) + "x" +
         std::to_string(cfg.encoder.scalar_dim));
  for (const auto* p : {&struct_profile, &if_profile})
    if (*p) {
      validate(**p);
      if ((*p)->length() != L)
        fail("protein '" + rec.id + "': profile length " + std::to_string((*p)->length()) + " != " + std::to_string(L));
    }
  if (cfg.use_struct_profile && !struct_profile) fail("protein '" + rec.id + "': missing structure profile");
  if (cfg.use_if_profile && !if_profile) fail("protein '" + rec.id + "': missing inverse-folding profile");
  in.record = std::move(rec);
  in.embedding = std::move(embedding);
  in.struct_profile = std::move(struct_profile);
  in.if_profile = std::move(if_profile);
  return in;
}

struct ForwardResult {
  EncoderOutput encoder;
  Var p_final;
};

/// Forward pass. `tokens` (residue ids, kMaskToken for masked sites) feed
/// the toy embedder; with a file-backed embedding they are ignored.
inline ForwardResult forward(Tape& tape, const ParamStore& params, const ModelConfig& cfg, const ModelInput& in,
                             const std::vector<int>& tokens) {
  if (tokens.size() != in.record.length()) fail("forward: token count does not match protein length");
  ResidueGraph g = in.graph;
  init_nodes(g, in.embedding ? *in.embedding : cfg.embedder().embed(tokens), cfg.encoder);
  ForwardResult r;
  r.encoder = encode(tape, g, params, cfg.encoder);
  std::optional<Var> ps, pi;
  if (cfg.use_struct_profile) {
    if (!in.struct_profile) fail("forward: structure profile enabled but not provided");
    ps = tape.constant(Tensor::from_matrix(in.struct_profile->matrix));
  }
  if (cfg.use_if_profile) {
    if (!in.if_profile) fail("forward: inverse-folding profile enabled but not provided");
    pi = tape.constant(Tensor::from_matrix(in.if_profile->matrix));
  }
  r.p_final = fuse(tape, params, r.encoder.probs, ps, pi, cfg.fusion);
  return r;
}

}  // namespace evofit
