#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "capforge/numerics/adam.hpp"
#include "capforge/numerics/grad_check.hpp"
#include "capforge/numerics/op_self_test.hpp"
#include "capforge/numerics/ops.hpp"
#include "capforge/util/rng.hpp"

using namespace capforge;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(s));
  for (double& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Runs `build` on a fresh tape over the given parameters and returns the loss;
// with_grad also fills the parameters' grads.
template <class Build>
ScalarObjective objective_of(std::vector<Parameter*> params, Build build) {
  return [params, build](bool with_grad) {
    Tape t;
    std::vector<Var> vs;
    for (Parameter* p : params) vs.push_back(t.param(*p));
    Var loss = build(t, vs);
    if (with_grad) {
      for (Parameter* p : params) p->zero_grad();
      t.backward(loss);
      t.accumulate_param_grads(params);
    }
    return t.value(loss).item();
  };
}

void expect_grads_match(std::vector<Parameter*> params, const ScalarObjective& f, double tol = 1e-6) {
  GradCheckReport r = grad_check(f, params, {.step = 1e-5, .tolerance = tol});
  for (const auto& p : r.params)
    EXPECT_TRUE(p.passed) << p.name << " max rel err " << p.max_rel_error << " at " << p.worst_index
                          << " analytic " << p.analytic_at_worst << " numeric " << p.numeric_at_worst;
}

}  // namespace

TEST(Backward, SumGivesOnes) {
  Parameter x("x", Tensor({2, 3}, std::vector<double>{1, -2, 3, 4, 5, -6}));
  Tape t;
  Var loss = ops::sum(t, t.param(x));
  t.backward(loss);
  for (double g : t.grad(t.param(x)).data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, ProductRule) {
  Parameter x("x", Tensor::scalar(3.0)), y("y", Tensor::scalar(5.0));
  Tape t;
  Var loss = ops::dot(t, t.param(x), t.param(y));
  t.backward(loss);
  EXPECT_EQ(t.grad(t.param(x)).item(), 5.0);
  EXPECT_EQ(t.grad(t.param(y)).item(), 3.0);
}

TEST(Backward, UnreachableParameterHasZeroGrad) {
  Parameter x("x", Tensor::scalar(2.0)), unused("u", Tensor({3}, 1.0));
  Tape t;
  Var u = t.param(unused);
  Var loss = ops::dot(t, t.param(x), t.param(x));
  t.backward(loss);
  for (double g : t.grad(u).data()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SecondBackwardIsRejected) {
  Parameter x("x", Tensor::scalar(2.0));
  Tape t;
  Var loss = ops::dot(t, t.param(x), t.param(x));
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), ContractViolation);
}

TEST(Backward, NonScalarLossIsRejected) {
  Parameter x("x", Tensor({3}, 1.0));
  Tape t;
  EXPECT_THROW(t.backward(t.param(x)), ContractViolation);
}

TEST(Backward, NonFiniteValueNamesTheOp) {
  Parameter x("x", Tensor::scalar(1e300));
  Tape t;
  try {
    ops::dot(t, t.param(x), t.param(x));
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_EQ(e.op(), "dot");
  }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tape t;
  Var z = t.constant(Tensor({2, 4}, 0.7));
  EXPECT_NEAR(t.value(ops::softmax_cross_entropy(t, z, {0, 3})).item(), std::log(4.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, ClosedFormTwoClasses) {
  Tape t;
  Var z = t.constant(Tensor({1, 2}, std::vector<double>{0.0, std::numbers::ln2}));
  EXPECT_NEAR(t.value(ops::softmax_cross_entropy(t, z, {1})).item(), -std::log(2.0 / 3.0), 1e-15);
}

TEST(SoftmaxCrossEntropy, ShiftInvariance) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    // dyadic logits and an integer shift keep every subtraction exact, so the
    // stabilized softmax is bitwise identical
    std::vector<double> logits(6), shifted(6);
    const double c = static_cast<double>(rng.below(200)) - 100.0;
    for (std::size_t i = 0; i < 6; ++i) {
      logits[i] = static_cast<double>(rng.below(4096)) / 256.0 - 8.0;
      shifted[i] = logits[i] + c;
    }
    EXPECT_EQ(kernels::softmax(logits), kernels::softmax(shifted));
    Tape t;
    const double a = t.value(ops::softmax_cross_entropy(t, t.constant(Tensor({1, 6}, logits)), {2})).item();
    const double b = t.value(ops::softmax_cross_entropy(t, t.constant(Tensor({1, 6}, shifted)), {2})).item();
    EXPECT_EQ(a, b);

    // arbitrary real shifts agree to rounding
    std::vector<double> general(6);
    const double cr = rng.uniform(-50, 50);
    for (std::size_t i = 0; i < 6; ++i) general[i] = logits[i] + cr;
    const auto p = kernels::softmax(logits), q = kernels::softmax(general);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, RowsSumToOne) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> z(9);
    for (double& v : z) v = rng.normal() * 20.0;
    const auto p = kernels::softmax(z);
    double s = 0.0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, OutOfRangeTarget) {
  Tape t;
  Var z = t.constant(Tensor({1, 3}));
  EXPECT_THROW(ops::softmax_cross_entropy(t, z, {3}), ContractViolation);
}

TEST(GradCheck, Quadratic) {
  Parameter x("x", Tensor::scalar(3.0));
  auto f = objective_of({&x}, [](Tape& t, const std::vector<Var>& v) { return ops::dot(t, v[0], v[0]); });
  GradCheckReport r = grad_check(f, {&x});
  ASSERT_EQ(r.params.size(), 1u);
  EXPECT_NEAR(r.params[0].analytic_at_worst, 6.0, 0.0);
  EXPECT_LT(r.params[0].max_rel_error, 1e-9);
}

TEST(GradCheck, ElementwiseSigmoid) {
  Rng rng(1);
  Parameter x("x", random_tensor({7}, rng));
  auto f = objective_of({&x}, [](Tape& t, const std::vector<Var>& v) { return ops::sum(t, ops::sigmoid(t, v[0])); });
  EXPECT_TRUE(grad_check(f, {&x}, {.tolerance = 1e-6}).passed());
}

TEST(GradCheck, DetectsNonDeterminism) {
  Parameter x("x", Tensor::scalar(1.0));
  int calls = 0;
  ScalarObjective f = [&](bool with_grad) {
    if (with_grad) x.grad = Tensor::scalar(1.0);
    return x.value.item() + 1e-3 * (calls++);
  };
  EXPECT_THROW(grad_check(f, {&x}), std::runtime_error);
}

TEST(GradCheck, CorruptedRuleIsCaught) {
  Rng rng(2);
  Parameter x("x", random_tensor({5}, rng));
  auto f = objective_of({&x}, [](Tape& t, const std::vector<Var>& v) { return ops::sum(t, ops::tanh(t, v[0])); });
  debug_hooks::corrupted_op() = "tanh";
  const bool passed = grad_check(f, {&x}).passed();
  debug_hooks::corrupted_op().clear();
  EXPECT_FALSE(passed);
  EXPECT_TRUE(grad_check(f, {&x}).passed());
}

// Every differentiable op against central differences at 1e-6.
TEST(GradientOracle, AllOps) {
  Rng rng(11);
  Parameter a("a", random_tensor({4}, rng)), b("b", random_tensor({4}, rng));
  Parameter w("w", random_tensor({3, 4}, rng)), bias("bias", random_tensor({3}, rng));
  Parameter table("table", random_tensor({5, 4}, rng));

  auto check = [&](std::vector<Parameter*> ps, auto build) { expect_grads_match(ps, objective_of(ps, build)); };
  // Weighting the outputs by a fixed vector keeps every output coordinate in play.
  auto weighted = [](Tape& t, Var y) {
    std::vector<double> c(t.value(y).size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.3 + 0.17 * static_cast<double>(i);
    return ops::dot(t, ops::reshape(t, y, {c.size()}), t.constant(Tensor::vector(c)));
  };

  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::add(t, v[0], v[1])); });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::sub(t, v[0], v[1])); });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::mul(t, v[0], v[1])); });
  check({&a}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::affine(t, v[0], -1.7, 0.3)); });
  check({&a}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::tanh(t, v[0])); });
  check({&a}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::sigmoid(t, v[0])); });
  check({&a}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::relu(t, v[0])); });
  check({&w, &a, &bias}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::matvec(t, v[0], v[1], v[2])); });
  check({&a, &bias}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::concat(t, {v[0], v[1], v[0]})); });
  check({&table}, [&](Tape& t, const std::vector<Var>& v) {
    return weighted(t, ops::add(t, ops::gather_row(t, v[0], 2), ops::gather_row(t, v[0], 4)));
  });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return ops::dot(t, v[0], v[1]); });
  check({&a}, [&](Tape& t, const std::vector<Var>& v) { return ops::mean(t, ops::mul(t, v[0], v[0])); });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::mean_over(t, {v[0], v[1], v[0]})); });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::max_over(t, {v[0], v[1]})); });
  check({&a, &b}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::stack(t, {v[0], v[1]})); });
  check({&w}, [&](Tape& t, const std::vector<Var>& v) { return ops::softmax_cross_entropy(t, v[0], {1, 0, 3}); });

  Parameter probs("probs", Tensor::vector({0.2, 0.7, 0.55, 0.9}));
  const std::vector<double> labels{1, 0, 1, 0};
  check({&probs}, [&](Tape& t, const std::vector<Var>& v) { return ops::binary_cross_entropy(t, v[0], labels); });

  Parameter img("img", random_tensor({2, 4, 6}, rng));
  Parameter kern("kern", random_tensor({3, 2, 3, 3}, rng)), kb("kb", random_tensor({3}, rng));
  check({&img, &kern, &kb}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::conv3x3(t, v[0], v[1], v[2])); });
  check({&img}, [&](Tape& t, const std::vector<Var>& v) { return weighted(t, ops::maxpool2x2(t, v[0])); });
}

TEST(BinaryCrossEntropy, ClampedAndClosedForms) {
  Tape t;
  Var perfect = t.constant(Tensor::vector({1.0, 0.0, 1.0}));
  EXPECT_LE(t.value(ops::binary_cross_entropy(t, perfect, std::vector<double>{1, 0, 1})).item(), 1.7e-7);
  Var half = t.constant(Tensor::vector({0.5, 0.5}));
  EXPECT_NEAR(t.value(ops::binary_cross_entropy(t, half, std::vector<double>{1, 0})).item(), std::log(2.0), 1e-15);
  EXPECT_THROW(ops::binary_cross_entropy(t, half, std::vector<double>{1, 0.5}), ContractViolation);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", Tensor::vector({1.0, -2.0, 0.5}));
  p.grad = Tensor::vector({0.3, -4.0, 1e-3});
  Adam adam({.learning_rate = 0.01});
  adam.step(p);
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p.value[2], 0.5 - 0.01, 1e-7);  // eps matters at tiny |g|
  EXPECT_EQ(adam.steps(p), 1u);
}

TEST(Adam, ZeroGradientIsANoOp) {
  Parameter p("p", Tensor::vector({1.5, -0.25}));
  const Tensor before = p.value;
  Adam adam;
  for (int i = 0; i < 25; ++i) {
    p.zero_grad();
    adam.step(p);
  }
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(adam.steps(p), 25u);
}

TEST(Adam, MissingGradIsAContractViolation) {
  Parameter p;
  p.name = "p";
  p.value = Tensor::scalar(1.0);
  Adam adam;
  EXPECT_THROW(adam.step(p), ContractViolation);
}

TEST(Adam, MinimizesQuadratic) {
  // Independent scalar recurrence of the bias-corrected update.
  double x = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  Parameter p("x", Tensor::scalar(1.0));
  Adam adam({.learning_rate = 0.1});
  for (int t = 0; t < 100; ++t) {
    p.grad = Tensor::scalar(2.0 * p.value.item());
    adam.step(p);
  }
  EXPECT_NEAR(p.value.item(), x, 1e-12);
  EXPECT_LT(std::abs(p.value.item()), 0.05);
}

TEST(OpSelfTest, EveryRulePassesAndACorruptedOneIsNamed) {
  for (const auto& c : op_self_test()) EXPECT_TRUE(c.passed) << c.op << " rel err " << c.max_rel_error;
  for (const char* op : {"mul", "tanh", "matvec", "conv3x3"}) {
    debug_hooks::corrupted_op() = op;
    std::vector<std::string> failing;
    for (const auto& c : op_self_test())
      if (!c.passed) failing.push_back(c.op);
    debug_hooks::corrupted_op().clear();
    EXPECT_EQ(failing, std::vector<std::string>{op});
  }
}
