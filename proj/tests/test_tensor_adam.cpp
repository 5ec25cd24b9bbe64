#include <gtest/gtest.h>

#include <cmath>

#include "sgembed/adam.hpp"
#include "sgembed/autodiff.hpp"
#include "sgembed/error.hpp"
#include "sgembed/tensor.hpp"

using namespace sgembed;

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  const Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, ScalarAndVectorViews) {
  const Tensor s = Tensor::scalar(4.0);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_DOUBLE_EQ(s.item(), 4.0);
  const Tensor v = Tensor::vector({1, 2, 3});
  EXPECT_EQ(v.rows(), 1u);
  EXPECT_EQ(v.cols(), 3u);
  EXPECT_THROW(v.item(), DimensionError);
}

TEST(Tensor, GradientMatchesDataShape) {
  Tensor t(Shape{2, 2});
  EXPECT_FALSE(t.has_grad());
  t.accumulate_grad(std::vector<double>{1, 2, 3, 4});
  t.accumulate_grad(std::vector<double>{1, 1, 1, 1});
  EXPECT_EQ(t.grad().size(), t.size());
  EXPECT_DOUBLE_EQ(t.grad()[3], 5.0);
  EXPECT_THROW(t.accumulate_grad(std::vector<double>{1}), DimensionError);
  t.zero_grad();
  EXPECT_DOUBLE_EQ(t.grad()[0], 0.0);
}

TEST(Backward, SumGivesOnes) {
  Tensor x(Shape{2, 2}, 3.0);
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(ops::sum(tape.parameter(x)));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tensor w = Tensor::scalar(0.0);
  w.set_requires_grad(true);
  Tape tape;
  const Var y = ops::sigmoid(tape.parameter(w));
  EXPECT_EQ(y.value().item(), 0.5);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p = Tensor::vector({1.0, -2.0});
  p.zero_grad();
  AdamState state;
  const std::vector<NamedParameter> params = {{"p", &p}};
  adam_step(params, state);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(state.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.5);
  p.accumulate_grad(std::vector<double>{1.0});
  AdamState state;  // lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8
  const std::vector<NamedParameter> params = {{"p", &p}};
  adam_step(params, state);
  // m_hat = 1, v_hat = 1 -> delta = -lr * 1 / (1 + eps)
  EXPECT_NEAR(p[0] - 0.5, -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.grad()[0], 0.0);  // gradients are zeroed after the step
}

TEST(Adam, MomentsFollowExponentialAverages) {
  Tensor p = Tensor::scalar(0.0);
  AdamState state;
  const std::vector<NamedParameter> params = {{"p", &p}};
  const double g1 = 2.0, g2 = -1.0;
  p.accumulate_grad(std::vector<double>{g1});
  adam_step(params, state);
  p.accumulate_grad(std::vector<double>{g2});
  adam_step(params, state);
  EXPECT_EQ(state.step_count, 2u);
  const double m = 0.9 * (0.1 * g1) + 0.1 * g2;
  const double v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
  EXPECT_NEAR(state.first_moment[0][0], m, 1e-15);
  EXPECT_NEAR(state.second_moment[0][0], v, 1e-15);
}

TEST(Adam, MissingGradientNamesTheParameter) {
  Tensor p = Tensor::scalar(0.0);
  AdamState state;
  const std::vector<NamedParameter> params = {{"layers.0.trunk.weight", &p}};
  try {
    adam_step(params, state);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layers.0.trunk.weight"), std::string::npos);
  }
}

TEST(Adam, ClippingBoundsTheJointGradientNorm) {
  Tensor a = Tensor::scalar(0.0), b = Tensor::scalar(0.0);
  a.accumulate_grad(std::vector<double>{30.0});
  b.accumulate_grad(std::vector<double>{40.0});
  AdamState clipped;
  const std::vector<NamedParameter> params = {{"a", &a}, {"b", &b}};
  adam_step(params, clipped, 5.0);
  // After scaling to norm 5 the gradients are (3, 4): first moments 0.3 and 0.4.
  EXPECT_NEAR(clipped.first_moment[0][0], 0.3, 1e-15);
  EXPECT_NEAR(clipped.first_moment[1][0], 0.4, 1e-15);
}
