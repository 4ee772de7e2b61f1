#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmfss/autograd.hpp"
#include "mmfss/checkpoint.hpp"
#include "mmfss/optim.hpp"
#include "support/gradcheck.hpp"

namespace mmfss {
namespace {

using testing::grad_check;
using testing::random_projection;

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(constant(Tensor::identity(2)), constant(m)).value(), m);
}

TEST(Matmul, Annihilation) {
  Var out = matmul(constant(Tensor::matrix({{1, 0}, {0, 0}})), constant(Tensor::matrix({{0}, {5}})));
  EXPECT_EQ(out.value(), Tensor::matrix({{0}, {0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(7);
  Tensor a = Tensor::randn({3, 4}, rng), b = Tensor::randn({4, 2}, rng);
  EXPECT_LT(max_abs_diff(matmul(constant(a), constant(b)).value(), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, InnerMismatchThrows) {
  EXPECT_THROW(matmul(constant(Tensor({2, 3})), constant(Tensor({2, 3}))), DimensionError);
}

TEST(CosineRows, SelfAndOrthogonal) {
  Var a = constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Tensor c = cosine_rows(a, a).value();
  EXPECT_DOUBLE_EQ(c(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(c(0, 1), 0.0);
}

TEST(CosineRows, ZeroRowYieldsZero) {
  Tensor c = cosine_rows(constant(Tensor::matrix({{0, 0, 0}})), constant(Tensor::matrix({{1, 2, 3}}))).value();
  EXPECT_EQ(c(0, 0), 0.0);
}

TEST(CosineRows, MatchesPerPairOracleAndStaysBounded) {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::randn({5, 3}, rng), b = Tensor::randn({4, 3}, rng);
  Tensor c = cosine_rows(constant(a), constant(b)).value();
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        dot += a(i, k) * b(j, k);
        na += a(i, k) * a(i, k);
        nb += b(j, k) * b(j, k);
      }
      EXPECT_NEAR(c(i, j), dot / (std::sqrt(na) * std::sqrt(nb)), 1e-12);
      EXPECT_LE(std::abs(c(i, j)), 1.0 + 1e-9);
    }
}

TEST(CosineRows, WidthMismatchThrows) {
  EXPECT_THROW(cosine_rows(constant(Tensor({2, 3})), constant(Tensor({2, 4}))), DimensionError);
}

TEST(Softmax, SymmetricPair) {
  Tensor y = softmax(constant(Tensor({1, 2}, {0.0, 0.0})), 1).value();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, ShiftInvariant) {
  Tensor y1 = softmax(constant(Tensor({1, 2}, {0.3, 1.7})), 1).value();
  Tensor y2 = softmax(constant(Tensor({1, 2}, {100.3, 101.7})), 1).value();
  EXPECT_LT(max_abs_diff(y1, y2), 1e-12);
}

TEST(Softmax, MatchesExpNormalizeOracle) {
  Tensor y = softmax(constant(Tensor({3}, {1.0, 2.0, 3.0})), 0).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(i + 1.0) / z, 1e-12);
}

TEST(Softmax, MiddleAxisSumsToOne) {
  std::mt19937_64 rng(3);
  Tensor y = softmax(constant(Tensor::randn({2, 4, 3}, rng, 3.0)), 1).value();
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < 4; ++b) s += y(a, b, c);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(Backward, SumOfSquares) {
  Var x = parameter(Tensor({3}, {1.0, -2.0, 0.5}));
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad(), Tensor({3}, {2.0, -4.0, 1.0}));
}

TEST(Backward, ConstantLossGivesZeroGradients) {
  Var x = parameter(Tensor({2}, {1.0, 2.0}));
  Var unused = parameter(Tensor({2}, {3.0, 4.0}));
  Var loss = sum(constant(Tensor({2}, {5.0, 6.0})));
  std::vector<Var> leaves{x, unused};
  for (const Tensor& g : gradients(loss, leaves)) EXPECT_EQ(g, Tensor::zeros({2}));
}

TEST(Backward, UnreachedLeafGetsZero) {
  Var x = parameter(Tensor({2}, {1.0, 2.0}));
  Var y = parameter(Tensor({2}, {3.0, 4.0}));
  std::vector<Var> leaves{x, y};
  auto g = gradients(sum(x), leaves);
  EXPECT_EQ(g[0], Tensor({2}, {1.0, 1.0}));
  EXPECT_EQ(g[1], Tensor::zeros({2}));
}

TEST(Backward, NonScalarLossThrows) {
  Var x = parameter(Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(backward(x), ContractError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Var x = parameter(Tensor({1}, {3.0}));
  Var y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

// Finite-difference sweep over every differentiable primitive.
class PrimitiveGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{2024};
  Var p(Shape s, double sd = 1.0) { return parameter(Tensor::randn(std::move(s), rng, sd)); }
  void expect_ok(const std::function<Var()>& f, std::vector<Var> leaves) {
    auto r = grad_check(f, std::move(leaves));
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_GT(r.checked, 0u);
  }
};

TEST_F(PrimitiveGradients, Elementwise) {
  Var a = p({3, 4}), b = p({3, 4}), col = p({3, 1});
  Var pos = parameter(Tensor::uniform({3, 1}, rng, 0.5, 2.0));
  expect_ok([&] { return random_projection(add(a, col), 1); }, {a, col});
  expect_ok([&] { return random_projection(sub(a, b), 2); }, {a, b});
  expect_ok([&] { return random_projection(mul(a, col), 3); }, {a, col});
  expect_ok([&] { return random_projection(div(a, pos), 4); }, {a, pos});
  expect_ok([&] { return random_projection(elu_plus_one(a), 5); }, {a});
  expect_ok([&] { return random_projection(sigmoid(a), 6); }, {a});
  expect_ok([&] { return random_projection(exp(scale(a, 0.5)), 7); }, {a});
  expect_ok([&] { return random_projection(relu(a), 8); }, {a});
}

TEST_F(PrimitiveGradients, LinearAlgebraAndShapes) {
  Var a = p({4, 3}), b = p({3, 5}), bias = p({5}), c = p({2, 3, 4});
  expect_ok([&] { return random_projection(add_bias(matmul(a, b), bias), 1); }, {a, b, bias});
  expect_ok([&] { return random_projection(permute3(c, {1, 0, 2}), 2); }, {c});
  expect_ok([&] { return random_projection(transpose(a), 3); }, {a});
  expect_ok([&] { return random_projection(concat_cols({a, matmul(a, b)}), 4); }, {a, b});
  expect_ok([&] { return random_projection(concat_rows({a, transpose(b)}), 5); }, {a, b});
  expect_ok([&] { return random_projection(repeat_cols(reshape(a, {12, 1}), 3), 6); }, {a});
  expect_ok([&] { return mean(mul(a, a)); }, {a});
}

TEST_F(PrimitiveGradients, CosineSoftmaxCrossEntropy) {
  Var a = p({5, 3}), b = p({4, 3}), c = p({5, 3}), z = p({6, 3}, 2.0), t = p({2, 4, 3});
  std::vector<int> labels{0, 2, 1, 1, 0, 2};
  expect_ok([&] { return random_projection(cosine_rows(a, b), 1); }, {a, b});
  expect_ok([&] { return random_projection(row_cosine(a, c), 2); }, {a, c});
  expect_ok([&] { return random_projection(softmax(t, 1), 3); }, {t});
  expect_ok([&] { return random_projection(softmax(z, 1), 4); }, {z});
  expect_ok([&] { return cross_entropy(z, labels); }, {z});
}

TEST_F(PrimitiveGradients, SparseAggregateAndKernelAttention) {
  auto s = std::make_shared<SparseRows>();
  s->cols = 5;
  s->push(0, 0.5);
  s->push(3, 0.5);
  s->end_row();
  s->push(4, 2.0);
  s->end_row();
  s->push(1, 1.0);
  s->push(1, -1.0);
  s->push(2, 0.25);
  s->end_row();
  Var x = p({5, 3});
  expect_ok([&] { return random_projection(sparse_aggregate(s, x), 1); }, {x});

  Var q = p({2, 6, 4}), k = p({2, 6, 4}), v = p({2, 6, 3});
  expect_ok([&] { return random_projection(kernel_attention(elu_plus_one(q), elu_plus_one(k), v), 2); }, {q, k, v});
}

TEST(Broadcast, IncompatibleShapesThrow) {
  EXPECT_THROW(add(constant(Tensor({3, 4})), constant(Tensor({4, 1}))), DimensionError);
  EXPECT_THROW(mul(constant(Tensor({3, 4})), constant(Tensor({1, 4}))), DimensionError);
}

TEST(Determinism, RepeatedEvaluationIsBitwiseEqual) {
  auto run = [] {
    std::mt19937_64 rng(5);
    Var a = parameter(Tensor::randn({6, 5}, rng)), b = parameter(Tensor::randn({5, 4}, rng));
    Var loss = sum(softmax(matmul(a, b), 1));
    backward(loss);
    return std::make_pair(loss.value(), a.grad());
  };
  EXPECT_EQ(run(), run());
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  Var w = parameter(Tensor({3}, {1.0, -2.0, 3.0}));
  AdamW opt({w}, {.lr = 0.1, .weight_decay = 0.0});
  opt.step({Tensor::zeros({3})});
  EXPECT_EQ(w.value(), Tensor({3}, {1.0, -2.0, 3.0}));
}

TEST(AdamW, FirstStepMatchesClosedForm) {
  Var w = parameter(Tensor({2}, {0.5, -1.0}));
  const AdamWOptions o{.lr = 0.01, .weight_decay = 0.1};
  AdamW opt({w}, o);
  const Tensor g({2}, {0.3, -4.0});
  opt.step({g});
  for (std::size_t i = 0; i < 2; ++i) {
    const double p0 = i == 0 ? 0.5 : -1.0;
    const double decayed = p0 * (1.0 - o.lr * o.weight_decay);
    // After one step m_hat = g and v_hat = g^2.
    const double expected = decayed - o.lr * g[i] / (std::abs(g[i]) + o.eps);
    EXPECT_NEAR(w.value()[i], expected, 1e-15);
  }
  EXPECT_EQ(opt.state().step, 1u);
}

TEST(AdamW, DecayOnlyScalesByOneMinusLrWd) {
  Var w = parameter(Tensor({2}, {2.0, -3.0}));
  AdamW opt({w}, {.lr = 0.006, .weight_decay = 0.01});
  opt.step({Tensor::zeros({2})});
  EXPECT_DOUBLE_EQ(w.value()[0], 2.0 * (1.0 - 0.006 * 0.01));
  EXPECT_DOUBLE_EQ(w.value()[1], -3.0 * (1.0 - 0.006 * 0.01));
}

TEST(AdamW, NanGradientIsTrainingError) {
  Var w = parameter(Tensor({1}, {1.0}));
  AdamW opt({w}, {});
  EXPECT_THROW(opt.step({Tensor({1}, {std::nan("")})}), TrainingError);
}

TEST(AdamW, StepCountIncreases) {
  Var w = parameter(Tensor({1}, {1.0}));
  AdamW opt({w}, {});
  for (int i = 1; i <= 3; ++i) {
    opt.step({Tensor({1}, {0.1})});
    EXPECT_EQ(opt.state().step, static_cast<std::uint64_t>(i));
  }
}

TEST(Checkpoint, JsonRoundTripIsBitwise) {
  std::mt19937_64 rng(9);
  ParamStore store;
  store.add("a.weight", Tensor::randn({3, 2}, rng));
  store.add("a.bias", Tensor::randn({2}, rng));
  Checkpoint c = Checkpoint::from_store(store, {{"kind", "test"}});
  Checkpoint back = Checkpoint::from_json(ordered_json::parse(c.to_json().dump()));
  ASSERT_EQ(back.params.size(), 2u);
  EXPECT_EQ(back.params[0].first, "a.weight");
  EXPECT_EQ(back.tensor("a.weight"), store.at("a.weight").value());
  EXPECT_EQ(back.tensor("a.bias"), store.at("a.bias").value());
  EXPECT_EQ(back.meta["kind"], "test");
}

TEST(Checkpoint, MissingVersionIsFormatError) {
  EXPECT_THROW(Checkpoint::from_json(ordered_json::parse(R"({"params":{}})")), FormatError);
  EXPECT_THROW(Checkpoint::from_json(ordered_json::parse(R"({"version":99,"params":{}})")), FormatError);
}

}  // namespace
}  // namespace mmfss
