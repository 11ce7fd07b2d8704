#include <gtest/gtest.h>

#include "evofit/autodiff.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace evofit;
using namespace evofit::testkit;

TEST(Autodiff, EveryPrimitivePassesGradientCheckOnRandomShapes) {
  for (const auto& c : primitive_cases()) {
    Rng rng(std::hash<std::string>{}(c.name) % 1000);
    for (int trial = 0; trial < 10; ++trial) {
      const ParamStore s = c.make(rng);
      const std::uint64_t wseed = rng.next();
      const double err = grad_check([&](Tape& t, const ParamStore& p) { return contract(t, c.op(t, p), wseed); }, s);
      EXPECT_LT(err, 1e-6) << c.name << " trial " << trial;
    }
  }
}

TEST(Autodiff, SoftmaxOfZerosIsUniformAndShiftInvariant) {
  Tape t;
  Var y = softmax_rows(t.constant(Tensor({1, 3}, 0.0)));
  for (double v : y.value().data) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  Rng rng(1);
  Tensor x = random_tensor({4, 7}, rng, -5, 5);
  Tensor shifted = x;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 7; ++j) shifted(i, j) += 10.0 * static_cast<double>(i) - 3.0;
  const Tensor a = softmax_rows(t.constant(x)).value();
  const Tensor b = softmax_rows(t.constant(shifted)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      s += a(i, j);
      EXPECT_NEAR(a(i, j), b(i, j), 1e-12);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, LayerNormOfConstantRowIsZero) {
  Tape t;
  Var y = layer_norm_rows(t.constant(Tensor({2, 5}, 3.7)));
  for (double v : y.value().data) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, SquareDerivativeAtThree) {
  ParamStore s;
  s.add("x", Tensor::scalar(3.0));
  Tape t;
  Var x = t.param(s, "x");
  Var y = sum(mul(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.param_grads(s).at("x").item(), 6.0);
}

TEST(Autodiff, QuadraticFormCheckIsTight) {
  Rng rng(3);
  ParamStore s;
  s.add("x", random_tensor({5, 1}, rng));
  const Tensor A = random_tensor({5, 5}, rng);
  const double err = grad_check(
      [&](Tape& t, const ParamStore& p) {
        Var x = t.param(p, "x");
        return sum(mul(x, matmul(t.constant(A), x)));
      },
      s);
  EXPECT_LT(err, 1e-9);
}

TEST(Autodiff, ZeroParameterGraphHasZeroError) {
  ParamStore empty;
  const double err = grad_check([](Tape& t, const ParamStore&) { return sum(t.constant(Tensor({2, 2}, 1.0))); }, empty);
  EXPECT_EQ(err, 0.0);
}

TEST(Autodiff, BackwardIsLinearInTheLoss) {
  Rng rng(6);
  ParamStore s;
  s.add("w", random_tensor({3, 4}, rng));
  s.add("v", random_tensor({4}, rng));
  const Tensor x = random_tensor({5, 3}, rng);
  auto f1 = [&](Tape& t, const ParamStore& p) { return sum(sigmoid(add_bias(matmul(t.constant(x), t.param(p, "w")), t.param(p, "v")))); };
  auto f2 = [&](Tape& t, const ParamStore& p) { return mean(exp(scale(matmul(t.constant(x), t.param(p, "w")), 0.3))); };
  auto grads = [&](const ScalarGraph& f) {
    Tape t;
    Var l = f(t, s);
    t.backward(l);
    return t.param_grads(s);
  };
  const auto g1 = grads(f1), g2 = grads(f2);
  const auto g12 = grads([&](Tape& t, const ParamStore& p) { return add(f1(t, p), f2(t, p)); });
  for (const auto& [name, g] : g12)
    for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_NEAR(g.data[i], g1.at(name).data[i] + g2.at(name).data[i], 1e-14);
}

TEST(Autodiff, ParamBoundTwiceSumsGradients) {
  ParamStore s;
  s.add("x", Tensor::scalar(2.0));
  Tape t;
  Var a = t.param(s, "x"), b = t.param(s, "x");
  t.backward(sum(mul(a, b)));
  EXPECT_DOUBLE_EQ(t.param_grads(s).at("x").item(), 4.0);
}

TEST(Autodiff, ErrorsOnShapeMismatchAndNonFinite) {
  Tape t;
  Var a = t.constant(Tensor({2, 3}, 1.0));
  Var b = t.constant(Tensor({2, 2}, 1.0));
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(matmul(a, a), Error);
  EXPECT_THROW(log(t.constant(Tensor({1, 2}, 0.0))), Error);
  EXPECT_THROW(exp(t.constant(Tensor({1, 1}, 1000.0))), Error);
  EXPECT_THROW(t.backward(a), Error);
  ParamStore s;
  EXPECT_THROW(grad_check([](Tape& tt, const ParamStore&) { return sum(tt.constant(Tensor({1}, 1.0))); }, s, {1e-8, 0}), Error);
}

TEST(ParamStore, NamesUniqueAndMatrixFlag) {
  ParamStore s;
  s.add("w", Tensor({2, 3}));
  s.add("b", Tensor({3}));
  EXPECT_TRUE(s.at("w").is_matrix);
  EXPECT_FALSE(s.at("b").is_matrix);
  EXPECT_THROW(s.add("w", Tensor({1})), Error);
  EXPECT_THROW(s.at("missing"), Error);
}

TEST(ParamStore, CheckpointRoundTripIsBitExact) {
  Rng rng(10);
  ParamStore s;
  s.add("layer.W", random_tensor({3, 4}, rng, -1e3, 1e3));
  s.add("layer.b", random_tensor({4}, rng));
  s.add("z", Tensor({2, 2, 2}, 1e-300));
  s.meta["scalar_dim"] = "4";
  const std::string text = write_checkpoint(s);
  const ParamStore back = read_checkpoint(text);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(write_checkpoint(back), text);
  EXPECT_THROW(read_checkpoint("garbage\n"), Error);
}
