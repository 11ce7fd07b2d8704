// Masked-residue pretraining: mask plans, the MLM loss over fused
// probabilities, and the hybrid Muon (matrices) / AdamW (everything else)
// optimizer.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "evofit/autodiff.hpp"
#include "evofit/model.hpp"

namespace evofit {

// ---------------------------------------------------------------- masking

enum class MaskAction { mask_token, random_swap, keep };

struct MaskPlan {
  std::vector<std::size_t> positions;  // 0-based, ascending
  std::vector<MaskAction> actions;
  std::vector<int> swap_to;  // residue id used by random_swap, else -1
  std::uint64_t seed = 0;
};

/// Number of sites selected for masking: ceil(rate * L), computed so that
/// float noise in rate * L (0.15 * 100 = 15.000000000000002) cannot add one.
inline std::size_t mask_count(std::size_t length, double rate) {
  const double raw = rate * static_cast<double>(length);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
}

/// Chooses ceil(rate * L) distinct sites; each is masked (80%), swapped
/// for a uniformly random residue (10%) or left unchanged (10%).
inline MaskPlan make_mask_plan(std::size_t length, double rate, std::uint64_t seed) {
  if (length == 0) fail("make_mask_plan: length must be positive");
  if (!(rate > 0.0 && rate < 1.0)) fail("make_mask_plan: rate must be in (0, 1)");
  Rng rng(seed);
  const std::size_t n = std::min(length, std::max<std::size_t>(1, mask_count(length, rate)));
  std::vector<std::size_t> all(length);
  std::iota(all.begin(), all.end(), 0);
  // Partial Fisher-Yates: the first n slots are a uniform sample.
  for (std::size_t i = 0; i < n; ++i) std::swap(all[i], all[i + rng.below(length - i)]);
  MaskPlan plan;
  plan.seed = seed;
  plan.positions.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(plan.positions.begin(), plan.positions.end());
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    if (u < 0.8) {
      plan.actions.push_back(MaskAction::mask_token);
      plan.swap_to.push_back(-1);
    } else if (u < 0.9) {
      plan.actions.push_back(MaskAction::random_swap);
      plan.swap_to.push_back(static_cast<int>(rng.below(kNumAA)));
    } else {
      plan.actions.push_back(MaskAction::keep);
      plan.swap_to.push_back(-1);
    }
  }
  return plan;
}

inline std::vector<int> apply_mask_plan(std::vector<int> tokens, const MaskPlan& plan) {
  for (std::size_t k = 0; k < plan.positions.size(); ++k) {
    const std::size_t p = plan.positions[k];
    if (p >= tokens.size()) fail("apply_mask_plan: position out of range");
    if (plan.actions[k] == MaskAction::mask_token) tokens[p] = kMaskToken;
    else if (plan.actions[k] == MaskAction::random_swap) tokens[p] = plan.swap_to[k];
  }
  return tokens;
}

/// Mean of -log P_final(original residue) over the planned sites. The toy
/// embedder sees the perturbed tokens; file-backed embeddings cannot be
/// re-masked, so for them the plan acts on the loss only.
inline Var mlm_loss(Tape& tape, const ParamStore& params, const ModelConfig& cfg, const ModelInput& in,
                    const MaskPlan& plan) {
  if (plan.positions.empty()) fail("mlm_loss: empty mask plan");
  const std::vector<int> original = tokenize(in.record.sequence);
  const std::vector<int> tokens = apply_mask_plan(original, plan);
  ForwardResult r = forward(tape, params, cfg, in, tokens);
  std::vector<std::size_t> cols;
  for (std::size_t p : plan.positions) {
    const int t = original[p];
    if (t < 0 || t >= kNumAA) fail("mlm_loss: target residue outside the amino-acid alphabet");
    cols.push_back(static_cast<std::size_t>(t));
  }
  return scale(mean(log(pick(r.p_final, plan.positions, cols))), -1.0);
}

// ---------------------------------------------------------------- optimizers

struct OptimizerConfig {
  double lr_muon = 1e-3;
  double lr_adamw = 1e-3;
  double momentum = 0.95;
  std::size_t ns_steps = 5;
  // Trailing Newton-Schulz steps that use the convergent (15, -10, 3) / 8
  // polynomial, which has 1 as a fixed point.
  std::size_t ns_finish_steps = 2;
  // Update multiplier is muon_scale * sqrt(max(rows, cols)); 0 disables.
  double muon_scale = 1.0;
  bool nesterov = true;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

/// Approximate orthogonal polar factor U V^T of g. The input is scaled by
/// its Frobenius norm; the leading steps use the fast quintic
/// (3.4445, -4.7750, 2.0315), the last `finish_steps` the convergent one.
inline Matrix newton_schulz(const Matrix& g, std::size_t steps, std::size_t finish_steps) {
  const bool tall = g.rows > g.cols;
  const std::size_t r = tall ? g.cols : g.rows, c = tall ? g.rows : g.cols;
  Matrix x(r, c);
  double norm = 0.0;
  for (double v : g.data) norm += v * v;
  norm = std::sqrt(norm) + 1e-7;
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) (tall ? x(j, i) : x(i, j)) = g(i, j) / norm;

  Matrix a(r, r), b(r, r), bx(r, c);
  for (std::size_t step = 0; step < steps; ++step) {
    const bool finish = step + finish_steps >= steps;
    const double ca = finish ? 15.0 / 8.0 : 3.4445;
    const double cb = finish ? -10.0 / 8.0 : -4.7750;
    const double cc = finish ? 3.0 / 8.0 : 2.0315;
    // a = x x^T
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += x(i, k) * x(j, k);
        a(i, j) = s;
      }
    // b = cb * a + cc * a a
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < r; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < r; ++k) s += a(i, k) * a(k, j);
        b(i, j) = cb * a(i, j) + cc * s;
      }
    // x = ca * x + b x
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < r; ++k) s += b(i, k) * x(k, j);
        bx(i, j) = ca * x(i, j) + s;
      }
    std::swap(x, bx);
  }
  if (!tall) return x;
  Matrix out(g.rows, g.cols);
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t j = 0; j < g.cols; ++j) out(i, j) = x(j, i);
  return out;
}

inline Matrix as_matrix_2d(const Tensor& t) {
  if (t.rank() < 2) fail("muon: parameter is not a matrix");
  Matrix m(t.shape[0], t.numel() / t.shape[0]);
  m.data = t.data;
  return m;
}

inline void muon_step(Tensor& param, const Tensor& grad, Tensor& buffer, const OptimizerConfig& c) {
  if (buffer.data.empty()) buffer = Tensor(param.shape, 0.0);
  Tensor update = grad;
  bool nonzero = false;
  for (std::size_t i = 0; i < grad.numel(); ++i) {
    buffer.data[i] = c.momentum * buffer.data[i] + grad.data[i];
    update.data[i] = c.nesterov ? grad.data[i] + c.momentum * buffer.data[i] : buffer.data[i];
    nonzero = nonzero || update.data[i] != 0.0;
  }
  const double decay = 1.0 - c.lr_muon * c.weight_decay;
  for (auto& v : param.data) v *= decay;
  if (!nonzero) return;
  const Matrix ortho = newton_schulz(as_matrix_2d(update), c.ns_steps, c.ns_finish_steps);
  const double dim_scale =
      c.muon_scale > 0 ? c.muon_scale * std::sqrt(static_cast<double>(std::max(ortho.rows, ortho.cols))) : 1.0;
  for (std::size_t i = 0; i < param.numel(); ++i) param.data[i] -= c.lr_muon * dim_scale * ortho.data[i];
}

inline void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long step, const OptimizerConfig& c) {
  if (m.data.empty()) m = Tensor(param.shape, 0.0);
  if (v.data.empty()) v = Tensor(param.shape, 0.0);
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad.data[i];
    if (!std::isfinite(g)) fail("adamw: non-finite gradient");
    m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * g;
    v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * g * g;
    const double mhat = m.data[i] / bc1;
    const double vhat = v.data[i] / bc2;
    param.data[i] = param.data[i] * (1.0 - c.lr_adamw * c.weight_decay) - c.lr_adamw * mhat / (std::sqrt(vhat) + c.eps);
  }
}

struct OptimizerState {
  std::map<std::string, Tensor> muon_buffer;
  std::map<std::string, Tensor> adam_m;
  std::map<std::string, Tensor> adam_v;
  long step = 0;
};

/// One update of every parameter, Muon for is_matrix entries and AdamW for
/// the rest. Returns the names each optimizer touched.
inline std::pair<std::vector<std::string>, std::vector<std::string>> optimizer_step(
    ParamStore& params, const std::map<std::string, Tensor>& grads, OptimizerState& state, const OptimizerConfig& c) {
  ++state.step;
  std::vector<std::string> muon, adam;
  for (auto& [name, p] : params.params()) {
    const Tensor& g = grads.at(name);
    for (double x : g.data)
      if (!std::isfinite(x)) fail("optimizer: non-finite gradient for '" + name + "'");
    if (p.is_matrix) {
      muon_step(p.value, g, state.muon_buffer[name], c);
      muon.push_back(name);
    } else {
      adamw_step(p.value, g, state.adam_m[name], state.adam_v[name], state.step, c);
      adam.push_back(name);
    }
  }
  return {muon, adam};
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  OptimizerConfig optimizer;
  double mask_rate = 0.15;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  std::size_t batch_size = 1;
  int jobs = 1;
};

/// Parses "key = value" lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(std::string_view text) {
  std::map<std::string, std::string> kv;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string_view line = lines[ln];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("config line " + std::to_string(ln + 1) + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail("config line " + std::to_string(ln + 1) + ": empty key");
    kv[key] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

inline TrainConfig train_config_from(const std::map<std::string, std::string>& kv, TrainConfig c = {}) {
  auto real = [&](const char* key, double& out) {
    if (auto it = kv.find(key); it != kv.end()) out = parse_double(it->second, key);
  };
  auto count = [&](const char* key, std::size_t& out) {
    if (auto it = kv.find(key); it != kv.end()) {
      const long v = parse_long(it->second, key);
      if (v < 0) fail(std::string("'") + key + "' must be non-negative");
      out = static_cast<std::size_t>(v);
    }
  };
  real("lr_muon", c.optimizer.lr_muon);
  real("lr_adamw", c.optimizer.lr_adamw);
  real("momentum", c.optimizer.momentum);
  count("ns_steps", c.optimizer.ns_steps);
  count("ns_finish_steps", c.optimizer.ns_finish_steps);
  real("muon_scale", c.optimizer.muon_scale);
  real("weight_decay", c.optimizer.weight_decay);
  real("beta1", c.optimizer.beta1);
  real("beta2", c.optimizer.beta2);
  real("adam_eps", c.optimizer.eps);
  if (auto it = kv.find("nesterov"); it != kv.end()) c.optimizer.nesterov = parse_bool(it->second, "nesterov");
  real("mask_rate", c.mask_rate);
  count("epochs", c.epochs);
  count("batch_size", c.batch_size);
  if (auto it = kv.find("seed"); it != kv.end()) c.seed = static_cast<std::uint64_t>(parse_long(it->second, "seed"));
  if (c.batch_size == 0) fail("'batch_size' must be positive");
  if (!(c.mask_rate > 0.0 && c.mask_rate < 1.0)) fail("'mask_rate' must be in (0, 1)");
  return c;
}

struct TrainResult {
  ParamStore params;
  std::vector<double> epoch_loss;
};

/// Loss and parameter gradients for one protein under one plan.
inline std::pair<double, std::map<std::string, Tensor>> loss_and_grads(const ParamStore& params, const ModelConfig& cfg,
                                                                       const ModelInput& in, const MaskPlan& plan) {
  Tape tape;
  Var loss = mlm_loss(tape, params, cfg, in, plan);
  tape.backward(loss);
  return {loss.value().item(), tape.param_grads(params)};
}

/// Mean MLM loss over fixed seeded plans; used for held-out evaluation.
inline double evaluate_mlm(const ParamStore& params, const ModelConfig& cfg, const std::vector<ModelInput>& data,
                           double mask_rate, std::uint64_t seed, std::size_t plans_per_protein = 4) {
  if (data.empty()) fail("evaluate_mlm: empty dataset");
  double total = 0.0;
  std::size_t n = 0;
  Rng rng(seed);
  for (const auto& in : data)
    for (std::size_t k = 0; k < plans_per_protein; ++k) {
      Tape tape;
      total += mlm_loss(tape, params, cfg, in, make_mask_plan(in.record.length(), mask_rate, rng.next())).value().item();
      ++n;
    }
  return total / static_cast<double>(n);
}

/// Epochs of shuffled mini-batches (one protein per forward pass, batch
/// gradients averaged in dataset order). All randomness derives from
/// config.seed, so equal inputs give bit-identical results.
inline TrainResult train(const std::vector<ModelInput>& data, const ModelConfig& cfg, const TrainConfig& tc,
                         ParamStore params) {
  if (data.empty()) fail("train: empty dataset");
  Rng rng(tc.seed);
  OptimizerState state;
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      const std::size_t B = end - start;
      std::vector<std::uint64_t> seeds(B);
      for (auto& s : seeds) s = rng.next();
      std::vector<std::pair<double, std::map<std::string, Tensor>>> parts(B);
      parallel_for(B, tc.jobs, [&](std::size_t b) {
        const ModelInput& in = data[order[start + b]];
        parts[b] = loss_and_grads(params, cfg, in, make_mask_plan(in.record.length(), tc.mask_rate, seeds[b]));
      });
      std::map<std::string, Tensor> grads = parts[0].second;
      for (std::size_t b = 1; b < B; ++b)
        for (auto& [name, g] : grads)
          for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] += parts[b].second.at(name).data[i];
      for (auto& [_, g] : grads)
        for (auto& v : g.data) v /= static_cast<double>(B);
      for (const auto& p : parts) epoch_total += p.first;
      optimizer_step(params, grads, state, tc.optimizer);
    }
    const double epoch_loss = epoch_total / static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) fail("train: loss diverged at epoch " + std::to_string(epoch + 1));
    result.epoch_loss.push_back(epoch_loss);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace evofit
