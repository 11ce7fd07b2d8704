#include <gtest/gtest.h>

#include "evofit/mlm_train.hpp"
#include "evofit/model.hpp"
#include "test_support.hpp"

using namespace evofit;

namespace {

TransitionConfig small_transition() { return {8, 2, 12}; }

// Replaces the zero output projection so the whole block is exercised.
void wake_up(ParamStore& params, const std::string& prefix, Rng& rng, double scale = 0.3) {
  for (const char* n : {".out.W", ".out.b"})
    for (auto& v : params.at(prefix + n).value.data) v = scale * rng.normal();
}

Tensor run_transition(const ParamStore& params, const Matrix& input, const TransitionConfig& c) {
  Tape t;
  return transition(t, params, kStructBlock, t.constant(Tensor::from_matrix(input)), c).value();
}

}  // namespace

TEST(Transition, FreshBlockOutputsZero) {
  Rng rng(1);
  ParamStore params;
  add_transition_params(params, kStructBlock, small_transition(), rng);
  const Tensor out = run_transition(params, testkit::random_profile(7, rng).matrix, small_transition());
  ASSERT_EQ(out.rows(), 7u);
  ASSERT_EQ(out.cols(), static_cast<std::size_t>(kNumCols));
  for (double v : out.data) EXPECT_EQ(v, 0.0);
}

TEST(Transition, PermutingPositionsPermutesOutput) {
  Rng rng(2);
  ParamStore params;
  add_transition_params(params, kStructBlock, small_transition(), rng);
  wake_up(params, kStructBlock, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t L = 2 + rng.below(10);
    const Matrix x = testkit::random_profile(L, rng).matrix;
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix px(L, kNumCols);
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < static_cast<std::size_t>(kNumCols); ++j) px(i, j) = x(perm[i], j);
    const Tensor a = run_transition(params, x, small_transition());
    const Tensor b = run_transition(params, px, small_transition());
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = 0; j < static_cast<std::size_t>(kNumCols); ++j) EXPECT_NEAR(b(i, j), a(perm[i], j), 1e-12);
  }
}

TEST(Transition, SinglePositionAndShapeErrors) {
  Rng rng(3);
  ParamStore params;
  add_transition_params(params, kStructBlock, small_transition(), rng);
  wake_up(params, kStructBlock, rng);
  const Tensor out = run_transition(params, testkit::random_profile(1, rng).matrix, small_transition());
  EXPECT_EQ(out.rows(), 1u);
  for (double v : out.data) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(run_transition(params, Matrix(3, 20, 0.05), small_transition()), Error);
  EXPECT_THROW(validate(TransitionConfig{6, 4, 8}), Error);
}

TEST(Transition, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  ParamStore params;
  add_transition_params(params, kStructBlock, small_transition(), rng);
  wake_up(params, kStructBlock, rng);
  const Matrix x = testkit::random_profile(5, rng).matrix;
  Tensor w({5, static_cast<std::size_t>(kNumCols)});
  for (auto& v : w.data) v = rng.normal();
  const double err = grad_check(
      [&](Tape& t, const ParamStore& p) {
        return sum(mul(transition(t, p, kStructBlock, t.constant(Tensor::from_matrix(x)), small_transition()),
                       t.constant(w)));
      },
      params);
  EXPECT_LT(err, 1e-6);
}

TEST(Fuse, AbsentSourcesReduceToSoftmaxOfEncoder) {
  Rng rng(5);
  const Matrix p = testkit::random_profile(4, rng).matrix;
  ParamStore empty;
  Tape t;
  Var ps2f = t.constant(Tensor::from_matrix(p));
  const Tensor fused = fuse(t, empty, ps2f, std::nullopt, std::nullopt, {}).value();
  const Tensor direct = softmax_rows(ps2f).value();
  EXPECT_EQ(fused, direct);
  FusionOptions log_opts;
  log_opts.log_space = true;
  const Tensor lg = fuse(t, empty, ps2f, std::nullopt, std::nullopt, log_opts).value();
  for (std::size_t k = 0; k < p.data.size(); ++k) EXPECT_NEAR(lg.data[k], p.data[k], 1e-14);
}

TEST(Fuse, RejectsMismatchedSources) {
  Rng rng(6);
  ParamStore params;
  add_transition_params(params, kStructBlock, small_transition(), rng);
  Tape t;
  Var a = t.constant(Tensor::from_matrix(testkit::random_profile(4, rng).matrix));
  Var b = t.constant(Tensor::from_matrix(testkit::random_profile(5, rng).matrix));
  FusionOptions o;
  o.transition = small_transition();
  EXPECT_THROW(fuse(t, params, a, b, std::nullopt, o), Error);
}

TEST(Model, ZeroInitBlocksMakeProfilesBitInvisible) {
  const ModelConfig with = testkit::tiny_model(true);
  for (int fixture = 0; fixture < 3; ++fixture) {
    const ModelInput in = testkit::toy_input(9 + 3 * fixture, 100 + fixture, with);
    const std::vector<int> tok = tokenize(in.record.sequence);
    const ParamStore both = init_model_params(with, 77);
    Tensor reference;
    for (int mask = 0; mask < 4; ++mask) {
      ModelConfig c = with;
      c.use_struct_profile = mask & 1;
      c.use_if_profile = mask & 2;
      const ParamStore p = init_model_params(c, 77);
      Tape t;
      const Tensor out = forward(t, p, c, in, tok).p_final.value();
      if (mask == 0) reference = out;
      else EXPECT_EQ(out, reference) << "sources " << mask;
    }
    Tape t;
    EXPECT_EQ(forward(t, both, with, in, tok).p_final.value(), reference);
  }
}

TEST(Model, MissingProfilesAreNamed) {
  const ModelConfig c = testkit::tiny_model(true);
  const ProteinRecord rec = toy::make_protein("needs", 8, 2, 1).record;
  try {
    prepare_input(rec, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("protein 'needs'"), std::string::npos);
  }
  Rng rng(1);
  EXPECT_THROW(prepare_input(rec, c, std::nullopt, testkit::random_profile(7, rng), testkit::random_profile(8, rng)),
               Error);
  EXPECT_THROW(prepare_input(rec, c, Matrix(8, 5), testkit::random_profile(8, rng), testkit::random_profile(8, rng)),
               Error);
}

TEST(Model, MetaRoundTripsConfig) {
  ModelConfig c = testkit::tiny_model(false);
  c.fusion.log_space = true;
  c.embedder_seed = 99;
  const ModelConfig back = model_config_from(to_meta(c));
  EXPECT_EQ(to_meta(back), to_meta(c));
  EXPECT_THROW(model_config_from({{"heads", "0"}}), Error);
  EXPECT_THROW(model_config_from({{"log_space", "maybe"}}), Error);
}

TEST(Model, FusedMlmLossPassesGradientCheck) {
  const ModelConfig cfg = testkit::tiny_model(true);
  for (int fixture = 0; fixture < 3; ++fixture) {
    const ModelInput in = testkit::toy_input(7 + fixture, 200 + fixture, cfg);
    ParamStore params = init_model_params(cfg, 300 + fixture);
    Rng rng(400 + fixture);
    wake_up(params, kStructBlock, rng);
    wake_up(params, kIfBlock, rng);
    const MaskPlan plan = make_mask_plan(in.record.length(), 0.3, 500 + fixture);
    const double err =
        grad_check([&](Tape& t, const ParamStore& p) { return mlm_loss(t, p, cfg, in, plan); }, params);
    EXPECT_LT(err, 1e-4) << "fixture " << fixture;
  }
}
