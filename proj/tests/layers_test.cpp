#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "daan/grad_check.hpp"
#include "daan/layers.hpp"
#include "daan/optim.hpp"

using namespace daan;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double limit = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = uniform(rng, -limit, limit);
  return t;
}

// Randomizes every LSTM bias so the zero fixed point does not hide errors.
void randomize_biases(BiLstmParams& p, Rng& rng) {
  std::vector<Parameter*> all;
  p.collect(all);
  for (Parameter* q : all)
    if (q->value.rank() == 1) q->value = random_tensor(q->value.shape(), rng, 0.5);
}

}  // namespace

TEST(Embed, PaddingRowsAreZero) {
  Rng rng(1);
  EmbeddingMatrix m = random_embedding(6, 4, rng);
  Tape tape;
  EXPECT_EQ(embed(tape, m, {0, 0, 0}).value(), Tensor({3, 4}, 0.0));
  EXPECT_TRUE(m.locked(0));
}

TEST(Embed, RepeatedIdsSumTheirGradients) {
  Rng rng(2);
  EmbeddingMatrix m = random_embedding(5, 3, rng);
  Tape tape;
  Var e = embed(tape, m, {2, 2});
  EXPECT_EQ(e.value().at(0, 1), e.value().at(1, 1));
  const Tensor w = Tensor::matrix(2, 3, {1, 2, 3, 10, 20, 30});
  tape.backward(sum(multiply_constant(e, w)));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(m.table.grad.at(2, k), w.at(0, k) + w.at(1, k));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(m.table.grad.at(3, k), 0.0);
}

TEST(Embed, LockedRowSurvivesAdamStep) {
  Rng rng(3);
  EmbeddingMatrix m = random_embedding(5, 3, rng);
  m.table.frozen_rows[3] = true;
  const Tensor before = m.table.value;
  // Force a nonzero gradient onto the locked row as well.
  for (double& g : m.table.grad.data()) g = 1.0;
  std::vector<Parameter*> params{&m.table};
  AdamState state;
  adam_step(params, state, AdamConfig{});
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(m.table.value.at(3, k), before.at(3, k));
    EXPECT_EQ(m.table.value.at(0, k), 0.0);
    EXPECT_NE(m.table.value.at(2, k), before.at(2, k));
  }
}

TEST(Embed, LockedRowGetsNoScatteredGradient) {
  Rng rng(4);
  EmbeddingMatrix m = random_embedding(4, 2, rng);
  m.table.frozen_rows[2] = true;
  Tape tape;
  tape.backward(sum(embed(tape, m, {2, 3, 0})));
  EXPECT_EQ(m.table.grad.at(2, 0), 0.0);
  EXPECT_EQ(m.table.grad.at(0, 0), 0.0);
  EXPECT_EQ(m.table.grad.at(3, 0), 1.0);
}

TEST(Embed, OutOfRangeIdIsRejected) {
  Rng rng(5);
  EmbeddingMatrix m = random_embedding(4, 2, rng);
  Tape tape;
  EXPECT_THROW(embed(tape, m, {1, 4}), VocabError);
}

TEST(BiLstm, ZeroInputWithZeroBiasesStaysAtZero) {
  Rng rng(6);
  BiLstmParams p = make_bilstm(3, 4, rng);
  Tape tape;
  const Tensor out = bilstm(tape, p, tape.constant(Tensor({5, 3}, 0.0)), {1, 1, 1, 1, 1}).value();
  EXPECT_EQ(out, Tensor({5, 8}, 0.0));
}

TEST(BiLstm, SingleStepDirectionsSeeTheSameToken) {
  Rng rng(7);
  BiLstmParams p = make_bilstm(3, 4, rng);
  p.backward = p.forward;  // identical cells must then agree
  Tape tape;
  const Tensor out = bilstm(tape, p, tape.constant(random_tensor({1, 3}, rng)), {1}).value();
  ASSERT_EQ(out.shape(), (Shape{1, 8}));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.at(0, k), out.at(0, k + 4));
}

TEST(BiLstm, FiveStepUnrollPassesGradCheck) {
  Rng rng(8);
  BiLstmParams p = make_bilstm(3, 2, rng);
  randomize_biases(p, rng);
  Parameter x("x", random_tensor({5, 3}, rng));
  const Tensor w = random_tensor({5, 4}, rng);
  std::vector<Parameter*> params{&x};
  p.collect(params);
  auto f = [&](Tape& t) { return sum(multiply_constant(bilstm(t, p, t.parameter(x), {1, 1, 1, 1, 1}), w)); };
  EXPECT_LT(grad_check(f, params).max_error, 1e-4);
}

TEST(BiLstm, PaddedBatchPassesGradCheck) {
  Rng rng(9);
  BiLstmParams p = make_bilstm(2, 3, rng);
  randomize_biases(p, rng);
  Parameter x("x", random_tensor({3, 4, 2}, rng));
  const Tensor mask = Tensor::matrix(3, 4, {1, 1, 1, 1, 1, 1, 0, 0, 1, 0, 0, 0});
  const Tensor w = random_tensor({3, 4, 6}, rng);
  std::vector<Parameter*> params{&x};
  p.collect(params);
  auto f = [&](Tape& t) { return sum(multiply_constant(bilstm_batch(t, p, t.parameter(x), mask), w)); };
  EXPECT_LT(grad_check(f, params).max_error, 1e-4);
}

TEST(BiLstm, PaddedPositionsEmitZeros) {
  Rng rng(10);
  BiLstmParams p = make_bilstm(2, 3, rng);
  randomize_biases(p, rng);
  Tape tape;
  const Tensor out = bilstm(tape, p, tape.constant(random_tensor({4, 2}, rng)), {1, 1, 0, 0}).value();
  for (std::size_t t = 2; t < 4; ++t)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(out.at(t, k), 0.0);
}

TEST(BiLstm, PaddingDoesNotChangeRealPositions) {
  Rng rng(11);
  BiLstmParams p = make_bilstm(2, 3, rng);
  randomize_biases(p, rng);
  const Tensor x3 = random_tensor({3, 2}, rng);
  Tensor x5({5, 2}, 0.0);
  for (std::size_t i = 0; i < 6; ++i) x5[i] = x3[i];
  x5.at(3, 0) = 9.0;  // garbage under the mask
  Tape tape;
  const Tensor a = bilstm(tape, p, tape.constant(x3), {1, 1, 1}).value();
  const Tensor b = bilstm(tape, p, tape.constant(x5), {1, 1, 1, 0, 0}).value();
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(a.at(t, k), b.at(t, k));
}

TEST(BiLstm, ForwardDirectionIsCausal) {
  Rng rng(12);
  BiLstmParams p = make_bilstm(3, 4, rng);
  randomize_biases(p, rng);
  for (std::size_t k = 0; k < 6; ++k) {
    Tensor x = random_tensor({6, 3}, rng);
    Tensor y = x;
    for (std::size_t t = k + 1; t < 6; ++t)
      for (std::size_t j = 0; j < 3; ++j) y.at(t, j) = uniform(rng, -1, 1);
    Tape tape;
    const std::vector<double> mask(6, 1.0);
    const Tensor a = bilstm(tape, p, tape.constant(x), mask).value();
    const Tensor b = bilstm(tape, p, tape.constant(y), mask).value();
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.at(k, j), b.at(k, j)) << "position " << k;
  }
}

TEST(BiLstm, NonPrefixMaskIsRejected) {
  Rng rng(13);
  BiLstmParams p = make_bilstm(2, 2, rng);
  Tape tape;
  EXPECT_THROW(bilstm(tape, p, tape.constant(Tensor({3, 2}, 0.0)), {1, 0, 1}), ContractError);
}

TEST(BiLstm, GateShapesFollowInputAndHidden) {
  Rng rng(14);
  BiLstmParams p = make_bilstm(5, 3, rng);
  EXPECT_EQ(p.forward.input.weight.value.shape(), (Shape{3, 8}));
  EXPECT_EQ(p.backward.candidate.bias.value.shape(), (Shape{3}));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 5; c < 8; ++c) EXPECT_LE(std::abs(p.forward.forget.weight.value.at(r, c)), init::kRecurrentLimit);
}

TEST(Attention, IdenticalActivationsGiveUniformWeights) {
  Rng rng(15);
  AttentionHeadParams p = make_attention_head("a", 4, 3, rng);
  Tensor acts({5, 4});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t k = 0; k < 4; ++k) acts.at(t, k) = 0.1 * static_cast<double>(k + 1);
  Tape tape;
  const AttentionOutput out = attention_head(tape, p, tape.constant(acts), std::vector<double>(5, 1.0));
  for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(out.alpha.value()[t], 0.2, 1e-15);
}

TEST(Attention, SingleSurvivorContextIsFirstActivation) {
  Rng rng(16);
  AttentionHeadParams p = make_attention_head("a", 4, 3, rng);
  const Tensor acts = random_tensor({4, 4}, rng);
  Tape tape;
  const AttentionOutput out = attention_head(tape, p, tape.constant(acts), {1, 0, 0, 0});
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out.context.value()[k], acts.at(0, k));
}

TEST(Attention, ContextMatchesBruteForceAndStaysInHull) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t_len = 1 + uniform_index(rng, 8), width = 2 * (1 + uniform_index(rng, 4));
    AttentionHeadParams p = make_attention_head("a", width, 1 + uniform_index(rng, 5), rng);
    const Tensor acts = random_tensor({t_len, width}, rng, 2.0);
    const std::size_t kept = 1 + uniform_index(rng, t_len);
    std::vector<double> mask(t_len, 0.0);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(kept), 1.0);
    Tape tape;
    const AttentionOutput out = attention_head(tape, p, tape.constant(acts), mask);
    const Tensor& alpha = out.alpha.value();
    for (std::size_t k = 0; k < width; ++k) {
      double brute = 0.0, lo = 1e300, hi = -1e300;
      for (std::size_t t = 0; t < kept; ++t) {
        brute += alpha[t] * acts.at(t, k);
        lo = std::min(lo, acts.at(t, k));
        hi = std::max(hi, acts.at(t, k));
      }
      const double c = out.context.value()[k];
      EXPECT_NEAR(c, brute, 1e-12);
      EXPECT_GE(c, lo - 1e-12);
      EXPECT_LE(c, hi + 1e-12);
    }
  }
}

TEST(Attention, GradientsMatchCentralDifferences) {
  Rng rng(18);
  AttentionHeadParams p = make_attention_head("a", 4, 3, rng);
  Parameter acts("acts", random_tensor({2, 5, 4}, rng));
  const Tensor mask = Tensor::matrix(2, 5, {1, 1, 1, 1, 1, 1, 1, 0, 0, 0});
  const Tensor w = random_tensor({2, 4}, rng);
  std::vector<Parameter*> params{&acts};
  p.collect(params);
  auto f = [&](Tape& t) {
    return sum(multiply_constant(attention_head_batch(t, p, t.parameter(acts), mask).context, w));
  };
  EXPECT_LT(grad_check(f, params).max_error, 1e-4);
}

TEST(Dense, ZeroWeightsGiveTheBias) {
  Rng rng(19);
  DenseParams d = make_dense("d", 3, 2, rng);
  d.weight.value.fill(0.0);
  d.bias.value = Tensor::vector({0.5, -1.5});
  Tape tape;
  const Tensor y = dense(tape, d, tape.constant(random_tensor({4, 3}, rng)), DenseActivation::linear).value();
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(y.at(r, 0), 0.5);
    EXPECT_EQ(y.at(r, 1), -1.5);
  }
}

TEST(Dense, SoftmaxOfZeroLogitsIsHalf) {
  Rng rng(20);
  DenseParams d = make_dense("d", 3, 2, rng);
  d.weight.value.fill(0.0);
  Tape tape;
  const Tensor y = dense(tape, d, tape.constant(random_tensor({3}, rng)), DenseActivation::softmax).value();
  EXPECT_EQ(y, Tensor::vector({0.5, 0.5}));
}

TEST(Dense, GradientsMatchCentralDifferences) {
  Rng rng(21);
  for (DenseActivation kind : {DenseActivation::linear, DenseActivation::relu, DenseActivation::tanh,
                               DenseActivation::sigmoid, DenseActivation::softmax}) {
    DenseParams d = make_dense("d", 4, 3, rng);
    d.bias.value = random_tensor({3}, rng);
    Parameter x("x", random_tensor({5, 4}, rng));
    const Tensor w = random_tensor({5, 3}, rng);
    std::vector<Parameter*> params{&x};
    d.collect(params);
    auto f = [&](Tape& t) { return sum(multiply_constant(dense(t, d, t.parameter(x), kind), w)); };
    EXPECT_LT(grad_check(f, params).max_error, 1e-4);
  }
}

TEST(Dense, ShapeMismatchIsRejected) {
  Rng rng(22);
  DenseParams d = make_dense("d", 4, 3, rng);
  Tape tape;
  EXPECT_THROW(dense(tape, d, tape.constant(Tensor({2, 5})), DenseActivation::relu), DimensionError);
}

TEST(Dropout, EvaluationModeIsIdentity) {
  Rng rng(23);
  Tape tape;
  Var x = tape.variable(random_tensor({10}, rng));
  Var y = dropout(x, 0.4, rng, false);
  EXPECT_EQ(y.id(), x.id());
  EXPECT_TRUE(bit_identical(y.value(), x.value()));
}

TEST(Dropout, ZeroRateIsIdentity) {
  Rng rng(24);
  Tape tape;
  Var x = tape.variable(random_tensor({10}, rng));
  EXPECT_TRUE(bit_identical(dropout(x, 0.0, rng, true).value(), x.value()));
}

TEST(Dropout, SurvivorFractionAndMeanAreKept) {
  Rng rng(25);
  Tape tape;
  const std::size_t n = 100000;
  Var x = tape.constant(Tensor({n}, 1.0));
  const Tensor y = dropout(x, 0.4, rng, true).value();
  std::size_t alive = 0;
  double mean = 0.0;
  for (double v : y.data()) {
    alive += v != 0.0 ? 1 : 0;
    mean += v;
  }
  mean /= static_cast<double>(n);
  EXPECT_NEAR(static_cast<double>(alive) / static_cast<double>(n), 0.6, 0.01);
  EXPECT_NEAR(mean, 1.0, 0.02);
}

TEST(Dropout, RateOfOneIsRejected) {
  Rng rng(26);
  Tape tape;
  Var x = tape.variable(Tensor({3}, 1.0));
  EXPECT_THROW(dropout(x, 1.0, rng, true), ParameterError);
  EXPECT_THROW(dropout(x, -0.1, rng, false), ParameterError);
}
