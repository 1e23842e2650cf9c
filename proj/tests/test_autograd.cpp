#include <gtest/gtest.h>

#include <cmath>

#include "groupcap/autograd.hpp"
#include "support/grad_cases.hpp"

using namespace groupcap;
using groupcap::check::gaussian;

TEST(Autograd, EveryPrimitivePassesFiniteDifferences) {
  for (const auto& c : check::primitive_grad_cases()) {
    EXPECT_LT(c.rel_error, 1e-6) << c.name;
  }
}

TEST(Autograd, MatmulForwardAndGradByHand) {
  Tape t;
  Var a = t.variable(Matrix{{1, 2}, {3, 4}});
  Var b = t.variable(Matrix{{5}, {6}});
  Var y = matmul(a, b);
  EXPECT_EQ(y.value()(0, 0), 17.0);
  EXPECT_EQ(y.value()(1, 0), 39.0);
  t.backward(sum(y));
  const Matrix ga = t.grad(a);
  EXPECT_EQ(ga(0, 0), 5.0);
  EXPECT_EQ(ga(1, 1), 6.0);
  const Matrix gb = t.grad(b);
  EXPECT_EQ(gb(0, 0), 4.0);
  EXPECT_EQ(gb(1, 0), 6.0);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Tape t;
  Var x = t.variable(Matrix{{3.0}});
  Var y = add(mul(x, x), x);  // x^2 + x
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Autograd, ReluGradientIsZeroAtZero) {
  Tape t;
  Var x = t.variable(Matrix{{0.0, -1.0, 2.0}});
  t.backward(sum(relu(x)));
  const Matrix g = t.grad(x);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(0, 1), 0.0);
  EXPECT_EQ(g(0, 2), 1.0);
}

TEST(Autograd, ConstantsReceiveNoGradient) {
  Tape t;
  Var c = t.constant(Matrix{{2.0}});
  Var x = t.variable(Matrix{{1.0}});
  t.backward(mul(c, x));
  EXPECT_EQ(t.grad(c)(0, 0), 0.0);
  EXPECT_EQ(t.grad(x)(0, 0), 2.0);
}

TEST(Autograd, BackwardRequiresScalarRoot) {
  Tape t;
  Var x = t.variable(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Autograd, ParameterGradientsAccumulateAcrossTapes) {
  ParamStore store;
  Parameter& w = store.add("w", Matrix{{2.0}});
  for (int i = 0; i < 2; ++i) {
    Tape t;
    Var y = mul(t.param(w), t.param(w));
    t.backward(y);
  }
  EXPECT_DOUBLE_EQ(w.grad(0, 0), 8.0);
  store.zero_grad();
  EXPECT_EQ(w.grad(0, 0), 0.0);
}

TEST(Autograd, ParamNodeIsCachedPerTape) {
  ParamStore store;
  Parameter& w = store.add("w", Matrix{{1.0}});
  Tape t;
  EXPECT_EQ(t.param(w).id(), t.param(w).id());
}

TEST(Autograd, ShapeErrors) {
  Tape t;
  Var a = t.variable(Matrix(2, 3));
  Var b = t.variable(Matrix(2, 3));
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_THROW(add(a, t.variable(Matrix(3, 2))), DimensionError);
  EXPECT_THROW(concat_rows({a, t.variable(Matrix(1, 2))}), DimensionError);
  EXPECT_THROW(slice_rows(a, 1, 2), IndexError);
  EXPECT_THROW(slice_cols(a, 3, 1), IndexError);
  EXPECT_THROW(gather_rows(a, {2}), IndexError);
}

TEST(Autograd, VarFromOtherTapeIsRejected) {
  Tape t1, t2;
  Var a = t1.variable(Matrix(1, 1));
  Var b = t2.variable(Matrix(1, 1));
  EXPECT_THROW(add(a, b), ContractError);
}

TEST(Autograd, SoftmaxRowsSumToOneAndMaskZeroes) {
  std::mt19937_64 rng(1);
  Tape t;
  Mask m(3, 3);
  m.set(0, 0, false);
  m.set(1, 2, false);
  Var y = row_softmax(t.constant(gaussian(3, 3, rng, 5.0)), &m);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0;
    for (double v : y.value().row(r)) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_EQ(y.value()(1, 2), 0.0);
}

TEST(Autograd, FullyMaskedRowIsDegenerate) {
  Tape t;
  Mask m(2, 2);
  m.set(1, 0, false);
  m.set(1, 1, false);
  EXPECT_THROW(row_softmax(t.constant(Matrix(2, 2)), &m), DegenerateMaskError);
}

TEST(Autograd, CrossEntropyUniformLogitsIsLogV) {
  Tape t;
  Var logits = t.constant(Matrix(4, 7));
  Var loss = cross_entropy_from_logits(logits, {1, 2, 3, 0}, {false, false, false, true});
  EXPECT_NEAR(loss.value()(0, 0), std::log(7.0), 1e-12);
}

TEST(Autograd, CrossEntropyErrors) {
  Tape t;
  Var logits = t.constant(Matrix(2, 3));
  EXPECT_THROW(cross_entropy_from_logits(logits, {0, 1}, {true, true}), EmptyLossError);
  EXPECT_THROW(cross_entropy_from_logits(logits, {0, 3}, {false, false}), IndexError);
  EXPECT_THROW(cross_entropy_from_logits(logits, {0}, {false}), DimensionError);
}

TEST(Autograd, UniformInitIsBoundedAndSeeded) {
  std::mt19937_64 r1(5), r2(5);
  const Matrix a = uniform_init(8, 8, 16, r1);
  const Matrix b = uniform_init(8, 8, 16, r2);
  EXPECT_EQ(a, b);
  for (double v : a.values()) EXPECT_LE(std::abs(v), 0.25);
}

TEST(ParamStore, DuplicateAndUnknownNames) {
  ParamStore s;
  s.add("x", Matrix(1, 1));
  EXPECT_THROW(s.add("x", Matrix(1, 1)), ConfigError);
  EXPECT_THROW(s.at("y"), ConfigError);
  EXPECT_EQ(s.find("y"), nullptr);
  EXPECT_EQ(s.scalar_count(), 1u);
}
