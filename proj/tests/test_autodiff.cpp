#include "energyflow/autodiff.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace energyflow;
using namespace energyflow::autodiff;
using energyflow::testing::fd_gradient;
using energyflow::testing::random_net;
using energyflow::testing::random_vector;
using energyflow::testing::rel_err;

namespace {

using Context = std::vector<std::pair<int, RealVector>>;

double eval_output(const Graph& g, std::span<const double> params, const std::vector<std::pair<int, RealVector>>& inputs) {
  Tape tape(g, params, Tape::Order::first);
  for (const auto& [node, v] : inputs) tape.set_input(node, v);
  tape.forward();
  return tape.output()(0, 0);
}

}  // namespace

TEST(Mish, KnownValues) {
  EXPECT_EQ(mish(0.0), 0.0);
  // 1 * tanh(log(1 + e))
  EXPECT_NEAR(mish(1.0), std::tanh(std::log1p(std::exp(1.0))), 1e-15);
  EXPECT_NEAR(mish(1.0), 0.8650983882673103, 1e-15);
  EXPECT_NEAR(mish(-50.0), 0.0, 1e-15);
  EXPECT_NEAR(mish(30.0), 30.0, 1e-12);
}

TEST(Mish, DerivativesMatchFiniteDifferences) {
  for (double x : {-8.0, -2.5, -0.7, 0.0, 0.3, 1.0, 2.2, 6.0, 19.0}) {
    const auto md = mish_derivatives(x);
    const double h = 1e-5;
    const double d1 = (mish(x + h) - mish(x - h)) / (2 * h);
    const double d2 = (mish_derivatives(x + h).first - mish_derivatives(x - h).first) / (2 * h);
    EXPECT_NEAR(md.value, mish(x), 1e-14);
    EXPECT_NEAR(md.first, d1, 1e-8 * std::max(1.0, std::abs(d1)));
    EXPECT_NEAR(md.second, d2, 1e-7);
  }
}

TEST(InputGradient, HalfSquaredNorm) {
  Graph g;
  const int a = g.input(2);
  g.half_sq_norm(a);
  const RealVector x = (RealVector(2) << 1.0, 2.0).finished();
  const RealVector grad = input_gradient(g, {}, a, x, {});
  EXPECT_DOUBLE_EQ(grad[0], 1.0);
  EXPECT_DOUBLE_EQ(grad[1], 2.0);
}

TEST(InputGradient, LinearEnergy) {
  Graph g;
  const int a = g.input(2);
  g.affine(a, 1);
  const std::vector<double> p{0.5, -0.3, 0.0};
  for (double x0 : {-3.0, 0.0, 7.0}) {
    const RealVector x = (RealVector(2) << x0, 1.0).finished();
    const RealVector grad = input_gradient(g, p, a, x, {});
    EXPECT_DOUBLE_EQ(grad[0], 0.5);
    EXPECT_DOUBLE_EQ(grad[1], -0.3);
  }
}

TEST(InputGradient, NonScalarOutputIsContractViolation) {
  Graph g;
  const int a = g.input(2);
  g.affine(a, 3);
  std::vector<double> p(g.param_count(), 0.1);
  EXPECT_THROW(input_gradient(g, p, a, RealVector::Ones(2), {}), contract_violation);
}

TEST(InputGradient, RandomNetsMatchFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const int da = 1 + static_cast<int>(rng.index(3));
    const int ds = 1 + static_cast<int>(rng.index(3));
    auto net = random_net(rng, da, ds);
    ASSERT_LE(net.graph.param_count(), 500u);
    const RealVector a = random_vector(rng, da);
    const RealVector s = random_vector(rng, ds);
    const RealVector t = RealVector::Constant(1, rng.uniform());
    const Context ctx{{net.state, s}, {net.time, t}};
    const RealVector g = input_gradient(net.graph, net.params, net.action, a, ctx);
    auto f = [&](const RealVector& x) { return eval_output(net.graph, net.params, {{net.action, x}, {net.state, s}, {net.time, t}}); };
    const RealVector fd = fd_gradient(f, a, 1e-5);
    if (fd.norm() < 1e-8) continue;
    EXPECT_LT(rel_err(g, fd), 1e-6) << "trial " << trial;
  }
}

TEST(ParamGradient, LinearEnergyAnalytic) {
  Graph g;
  const int a = g.input(2);
  g.affine(a, 1);
  const std::vector<double> p{0.5, -0.3, 0.2};
  const RealVector c = (RealVector(2) << 0.1, 0.4).finished();
  auto [loss, grad] = param_gradient_of_score_loss(g, p, a, RealVector::Ones(2), {}, [&](const RealVector& gv) {
    return std::pair<double, RealVector>((gv - c).squaredNorm(), 2.0 * (gv - c));
  });
  EXPECT_NEAR(loss, 0.16 + 0.49, 1e-15);
  EXPECT_NEAR(grad[0], 2 * (0.5 - 0.1), 1e-15);
  EXPECT_NEAR(grad[1], 2 * (-0.3 - 0.4), 1e-15);
  EXPECT_EQ(grad[2], 0.0);
}

TEST(ParamGradient, ConstantLossGivesZero) {
  Rng rng(5);
  auto net = random_net(rng, 2, 2);
  const Context ctx{{net.state, random_vector(rng, 2)}, {net.time, RealVector::Constant(1, 0.3)}};
  auto [loss, grad] = param_gradient_of_score_loss(net.graph, net.params, net.action, random_vector(rng, 2), ctx,
                                                   [](const RealVector& gv) {
                                                     return std::pair<double, RealVector>(1.0, RealVector::Zero(gv.size()));
                                                   });
  EXPECT_EQ(loss, 1.0);
  EXPECT_EQ(grad.norm(), 0.0);
}

TEST(ParamGradient, RandomNetsMatchFiniteDifferences) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    const int da = 1 + static_cast<int>(rng.index(3));
    const int ds = 1 + static_cast<int>(rng.index(2));
    auto net = random_net(rng, da, ds);
    const RealVector a = random_vector(rng, da);
    const RealVector c = random_vector(rng, da);
    const Context ctx{{net.state, random_vector(rng, ds)}, {net.time, RealVector::Constant(1, rng.uniform())}};
    auto loss_of = [&](const RealVector& gv) {
      RealVector d = gv - c;
      double l = d.squaredNorm();
      RealVector dl = 2.0 * d;
      for (Eigen::Index i = 0; i < gv.size(); ++i) {
        l += std::log1p(gv[i] * gv[i]);
        dl[i] += 2.0 * gv[i] / (1.0 + gv[i] * gv[i]);
      }
      return std::pair<double, RealVector>(l, dl);
    };
    auto [loss, grad] = param_gradient_of_score_loss(net.graph, net.params, net.action, a, ctx, loss_of);
    auto f = [&](const RealVector& phi) {
      std::vector<double> p(phi.data(), phi.data() + phi.size());
      return loss_of(input_gradient(net.graph, p, net.action, a, ctx)).first;
    };
    const RealVector phi = Eigen::Map<const RealVector>(net.params.data(), static_cast<Eigen::Index>(net.params.size()));
    const RealVector fd = fd_gradient(f, phi, 1e-4);
    EXPECT_LT(rel_err(grad, fd), 1e-4) << "trial " << trial;
  }
}

TEST(ParamGradient, FirstOrderTapeRefusesSecondOrderSweep) {
  Rng rng(3);
  auto net = random_net(rng, 2, 2);
  Tape tape(net.graph, net.params, Tape::Order::first);
  tape.set_input(net.action, random_vector(rng, 2));
  tape.set_input(net.state, random_vector(rng, 2));
  tape.set_input(net.time, Block::Constant(1, 1, 0.5));
  tape.forward();
  tape.input_gradient(net.action);
  RealVector buf = RealVector::Zero(static_cast<Eigen::Index>(net.graph.param_count()));
  EXPECT_THROW(tape.mixed_param_gradient(net.action, Block::Ones(2, 1), buf), contract_violation);
}

TEST(ParamGradient, SweepWithoutInputGradientIsContractViolation) {
  Rng rng(3);
  auto net = random_net(rng, 2, 2);
  Tape tape(net.graph, net.params, Tape::Order::second);
  tape.set_input(net.action, random_vector(rng, 2));
  tape.set_input(net.state, random_vector(rng, 2));
  tape.set_input(net.time, Block::Constant(1, 1, 0.5));
  tape.forward();
  EXPECT_THROW(tape.hessian_vector(net.action, Block::Ones(2, 1)), contract_violation);
}

TEST(ParamGradient, BatchedEqualsSumOfSamples) {
  Rng rng(13);
  auto net = random_net(rng, 2, 3);
  const int batch = 6;
  Block a(2, batch), s(3, batch), t(1, batch), dir(2, batch);
  for (int c = 0; c < batch; ++c) {
    a.col(c) = random_vector(rng, 2);
    s.col(c) = random_vector(rng, 3);
    t(0, c) = rng.uniform();
    dir.col(c) = random_vector(rng, 2);
  }
  Tape tape(net.graph, net.params);
  tape.set_input(net.action, a);
  tape.set_input(net.state, s);
  tape.set_input(net.time, t);
  tape.forward();
  const Block g = tape.input_gradient(net.action);
  RealVector batched = RealVector::Zero(static_cast<Eigen::Index>(net.graph.param_count()));
  tape.mixed_param_gradient(net.action, dir, batched);

  RealVector summed = RealVector::Zero(batched.size());
  for (int c = 0; c < batch; ++c) {
    const Context ctx{{net.state, s.col(c)}, {net.time, t.col(c)}};
    const RealVector gc = input_gradient(net.graph, net.params, net.action, a.col(c), ctx);
    EXPECT_LT((gc - g.col(c)).norm(), 1e-13);
    const RealVector dc = dir.col(c);
    auto [l, pg] = param_gradient_of_score_loss(net.graph, net.params, net.action, a.col(c), ctx,
                                                [&](const RealVector& gv) { return std::pair<double, RealVector>(dc.dot(gv), dc); });
    summed += pg;
  }
  EXPECT_LT((batched - summed).norm(), 1e-12 * std::max(1.0, summed.norm()));
}

TEST(Backward, ParamGradientOfOutputMatchesFiniteDifferences) {
  Rng rng(21);
  auto net = random_net(rng, 2, 2);
  const RealVector a = random_vector(rng, 2), s = random_vector(rng, 2);
  const RealVector t = RealVector::Constant(1, 0.4);
  Tape tape(net.graph, net.params, Tape::Order::first);
  tape.set_input(net.action, a);
  tape.set_input(net.state, s);
  tape.set_input(net.time, t);
  tape.forward();
  RealVector grad = RealVector::Zero(static_cast<Eigen::Index>(net.graph.param_count()));
  tape.backward(Block::Ones(1, 1), grad);
  auto f = [&](const RealVector& phi) {
    std::vector<double> p(phi.data(), phi.data() + phi.size());
    return eval_output(net.graph, p, {{net.action, a}, {net.state, s}, {net.time, t}});
  };
  const RealVector phi = Eigen::Map<const RealVector>(net.params.data(), static_cast<Eigen::Index>(net.params.size()));
  EXPECT_LT(rel_err(grad, fd_gradient(f, phi, 1e-5)), 1e-7);
  // input adjoints from the full pass agree with the active-only pass
  const Block ga = tape.adjoint_of(net.action);
  const Context ctx{{net.state, s}, {net.time, t}};
  EXPECT_LT((ga.col(0) - input_gradient(net.graph, net.params, net.action, a, ctx)).norm(), 1e-13);
}

TEST(Hessian, QuadraticFormIsExact) {
  // E = 0.5 a^T A a with A = W^T W built from scale + half_sq_norm of W a
  Graph g;
  const int a = g.input(3);
  g.half_sq_norm(g.affine(a, 3));
  Rng rng(8);
  std::vector<double> p(g.param_count(), 0.0);
  for (std::size_t i = 0; i < 9; ++i) p[i] = rng.normal();
  Eigen::Map<const Eigen::MatrixXd> w(p.data(), 3, 3);
  const Eigen::MatrixXd expected = w.transpose() * w;
  const RealMatrix h = input_hessian(g, p, a, random_vector(rng, 3), {});
  EXPECT_LT((Eigen::MatrixXd(h) - expected).norm(), 1e-13);
  EXPECT_LT(sym_defect(h), 1e-15);
}

TEST(Hessian, RandomNetsSymmetricAndMatchFiniteDifferences) {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const int da = 1 + static_cast<int>(rng.index(3));
    auto net = random_net(rng, da, 2);
    const RealVector a = random_vector(rng, da);
    const Context ctx{{net.state, random_vector(rng, 2)}, {net.time, RealVector::Constant(1, rng.uniform())}};
    const RealMatrix h = input_hessian(net.graph, net.params, net.action, a, ctx);
    EXPECT_LT(sym_defect(h), 1e-10);
    for (int j = 0; j < da; ++j) {
      RealVector ap = a, am = a;
      const double step = 1e-5;
      ap[j] += step;
      am[j] -= step;
      const RealVector col = (input_gradient(net.graph, net.params, net.action, ap, ctx) -
                              input_gradient(net.graph, net.params, net.action, am, ctx)) /
                             (2 * step);
      EXPECT_LT(rel_err(h.col(j), col), 1e-5) << "trial " << trial << " column " << j;
    }
  }
}

TEST(Tape, RejectsWrongParameterLength) {
  Graph g;
  g.affine(g.input(2), 1);
  std::vector<double> p(2);
  EXPECT_THROW(Tape(g, p), std::invalid_argument);
}

TEST(Tape, ForwardRequiresAllInputs) {
  Graph g;
  const int a = g.input(2);
  const int b = g.input(2);
  g.half_sq_norm(g.add(a, b));
  Tape tape(g, {});
  tape.set_input(a, Block::Ones(2, 1));
  EXPECT_THROW(tape.forward(), std::invalid_argument);
}
