#include "energyflow/energy_model.hpp"
#include "energyflow/sampler.hpp"
#include "energyflow/synth_env.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace energyflow;

namespace {

/// E(a) = w . a; its action gradient is w everywhere.
EnergyNet linear_energy(const RealVector& w) {
  autodiff::Graph g;
  const int a = g.input(static_cast<int>(w.size()));
  const int s = g.input(1);
  const int t = g.input(1);
  g.set_output(g.affine(a, 1));
  std::vector<double> p(w.data(), w.data() + w.size());
  p.push_back(0.0);
  return EnergyNet(std::move(g), a, s, t, std::move(p));
}

ExpertSpec diagonal_gaussian(double v0, double v1) {
  return ExpertSpec::gaussian(Eigen::MatrixXd::Zero(2, 1), (RealVector(2) << 0.4, -0.3).finished(),
                              (Eigen::VectorXd(2) << v0, v1).finished());
}

/// Exact probability-flow map from t = T to the endpoint gamma for a
/// diagonal Gaussian: each coordinate contracts toward the mean by
/// sqrt((v + sigma(gamma)^2) / (v + sigma(T)^2)).
RealVector closed_form_endpoint(const ExpertSpec& e, const NoiseSchedule& sched, const RealVector& a_t, double gamma) {
  const RealVector mu = e.mean(RealVector::Zero(1));
  const double st = sched.sigma(sched.horizon), sg = sched.sigma(gamma);
  RealVector out(a_t.size());
  for (Eigen::Index i = 0; i < a_t.size(); ++i)
    out[i] = mu[i] + (a_t[i] - mu[i]) * std::sqrt((e.cov_diag[i] + sg * sg) / (e.cov_diag[i] + st * st));
  return out;
}

}  // namespace

TEST(EulerStep, ZeroGradientIsFixedPoint) {
  const EnergyNet net = linear_energy(RealVector::Zero(2));
  NoiseSchedule sched;
  const Eigen::MatrixXd a = (Eigen::MatrixXd(2, 1) << 0.3, -1.2).finished();
  const Eigen::MatrixXd next = euler_step(net, sched, a, Eigen::MatrixXd::Zero(1, 1), 0.7, 0.05);
  EXPECT_EQ(next, a);
}

TEST(EulerStep, HandComputedUpdate) {
  // sigma(t)^2 = e^t and d sigma^2/dt = e^t when sigma_max / sigma_min = e^0.5;
  // at t = ln 2 the derivative is 2
  NoiseSchedule sched{1.0, std::exp(0.5), 1.0};
  const double t = std::log(2.0);
  ASSERT_NEAR(sched.dsigma2_dt(t), 2.0, 1e-14);
  const EnergyNet net = linear_energy(RealVector::Constant(1, 0.5));
  const Eigen::MatrixXd next = euler_step(net, sched, Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Zero(1, 1), t, 0.1);
  EXPECT_NEAR(next(0, 0), 0.95, 1e-14);
}

TEST(EulerStep, RejectsNonPositiveStep) {
  const EnergyNet net = linear_energy(RealVector::Zero(1));
  EXPECT_THROW(euler_step(net, NoiseSchedule{}, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1), 0.5, 0.0),
               std::invalid_argument);
}

TEST(EulerStep, NonFiniteGradientRaisesDivergence) {
  const EnergyNet net = linear_energy(RealVector::Constant(1, std::numeric_limits<double>::quiet_NaN()));
  try {
    euler_step(net, NoiseSchedule{}, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, 1), 0.5, 0.1, 7);
    FAIL() << "expected sampler_divergence";
  } catch (const sampler_divergence& e) {
    EXPECT_EQ(e.step(), 7);
  }
}

TEST(OdeConfig, Validation) {
  EXPECT_THROW((OdeConfig{0, 1e-3}.validate(1.0)), std::invalid_argument);
  EXPECT_THROW((OdeConfig{20, 0.0}.validate(1.0)), std::invalid_argument);
  EXPECT_THROW((OdeConfig{20, 1.0}.validate(1.0)), std::invalid_argument);
  EXPECT_NO_THROW((OdeConfig{1, 1e-3}.validate(1.0)));
}

TEST(Flow, FirstOrderConvergenceToClosedForm) {
  NoiseSchedule sched;
  const ExpertSpec e = diagonal_gaussian(0.3, 0.9);
  const ExpertEnergy field(e, sched);
  const Eigen::MatrixXd a_t = (Eigen::MatrixXd(2, 1) << 7.0, -4.0).finished();
  const Eigen::MatrixXd s = Eigen::MatrixXd::Zero(1, 1);
  const double gamma = 1e-3;
  const RealVector exact = closed_form_endpoint(e, sched, a_t.col(0), gamma);

  std::vector<double> log_k, log_err, errs;
  for (int k : {10, 20, 40, 80}) {
    const SampleBatch b = integrate_flow(field, sched, a_t, s, OdeConfig{k, gamma});
    const double err = (b.actions.col(0) - exact).norm();
    errs.push_back(err);
    log_k.push_back(std::log(k));
    log_err.push_back(std::log(err));
  }
  const double slope = -fitted_slope(log_k, log_err);
  EXPECT_GE(slope, 0.8);
  EXPECT_LE(slope, 1.2);
  // halving the step roughly halves the error
  for (std::size_t i = 1; i < errs.size(); ++i) {
    EXPECT_GT(errs[i - 1] / errs[i], 1.5);
    EXPECT_LT(errs[i - 1] / errs[i], 2.5);
  }
}

TEST(Flow, SingleStepIsFinite) {
  NoiseSchedule sched;
  const ExpertEnergy field(diagonal_gaussian(0.25, 0.25), sched);
  Rng rng(3);
  const SampleResult r = sample(field, sched, RealVector::Zero(1), OdeConfig{1, 1e-3}, rng);
  EXPECT_TRUE(r.action.allFinite());
  EXPECT_TRUE(std::isfinite(r.energy));
}

TEST(Sample, ReturnsEnergyAtEndpoint) {
  NoiseSchedule sched;
  const ExpertEnergy field(diagonal_gaussian(0.25, 0.5), sched);
  Rng rng(4);
  const OdeConfig cfg{20, 1e-3};
  const SampleResult r = sample(field, sched, RealVector::Zero(1), cfg, rng);
  const double want = field.energies(r.action, Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, cfg.gamma))[0];
  EXPECT_EQ(r.energy, want);
}

TEST(Sample, SameSeedSameAction) {
  NoiseSchedule sched;
  const ExpertEnergy field(diagonal_gaussian(0.25, 0.5), sched);
  Rng r1(9), r2(9);
  const SampleResult a = sample(field, sched, RealVector::Zero(1), OdeConfig{}, r1);
  const SampleResult b = sample(field, sched, RealVector::Zero(1), OdeConfig{}, r2);
  EXPECT_EQ(a.action, b.action);
  EXPECT_EQ(a.energy, b.energy);
}

TEST(SampleBatch, ElementDoesNotDependOnBatchSize) {
  NoiseSchedule sched;
  const ExpertEnergy field(diagonal_gaussian(0.25, 0.5), sched);
  Rng r1(21), r2(21);
  const SampleBatch small = sample_batch(field, sched, Eigen::MatrixXd::Zero(1, 3), OdeConfig{}, r1);
  const SampleBatch large = sample_batch(field, sched, Eigen::MatrixXd::Zero(1, 50), OdeConfig{}, r2);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_EQ(small.actions.col(i), large.actions.col(i));
    EXPECT_EQ(small.energies[i], large.energies[i]);
  }
}

TEST(SampleBatch, EmptyInputGivesEmptyOutput) {
  NoiseSchedule sched;
  const ExpertEnergy field(diagonal_gaussian(0.25, 0.5), sched);
  Rng rng(1);
  const SampleBatch b = sample_batch(field, sched, Eigen::MatrixXd::Zero(1, 0), OdeConfig{}, rng);
  EXPECT_EQ(b.actions.cols(), 0);
  EXPECT_EQ(b.actions.rows(), 2);
  EXPECT_EQ(b.energies.size(), 0);
}

TEST(SampleBatch, ExactFieldReproducesEndpointLaw) {
  // fine Euler grid on the exact field; with a_T ~ N(0, sT^2) the endpoint
  // law is Gaussian with mean mu (1 - c) and variance sT^2 c^2, where
  // c = sqrt((v + sg^2) / (v + sT^2)) is the exact contraction
  NoiseSchedule sched;
  const ExpertSpec e = diagonal_gaussian(0.3, 0.6);
  const ExpertEnergy field(e, sched);
  Rng rng(5);
  const OdeConfig cfg{1000, 1e-3};
  const SampleBatch b = sample_batch(field, sched, Eigen::MatrixXd::Zero(1, 2000), cfg, rng);
  const RealVector mu = e.mean(RealVector::Zero(1));
  const double st = sched.sigma(sched.horizon), sg = sched.sigma(cfg.gamma);
  const RealVector m = b.actions.rowwise().mean();
  const Eigen::MatrixXd centered = b.actions.colwise() - m;
  const Eigen::MatrixXd cov = centered * centered.transpose() / (b.actions.cols() - 1.0);
  for (int i = 0; i < 2; ++i) {
    const double v = e.cov_diag[i];
    const double c = std::sqrt((v + sg * sg) / (v + st * st));
    EXPECT_NEAR(m[i], mu[i] * (1.0 - c), 0.05);
    EXPECT_NEAR(cov(i, i), st * st * c * c, 0.08);
    EXPECT_NEAR(cov(i, i), v, 0.08);
  }
  EXPECT_NEAR(cov(0, 1), 0.0, 0.08);
}

TEST(SampleBatch, MixtureModesBothPopulated) {
  NoiseSchedule sched;
  const ExpertSpec e = ExpertSpec::mixture2(Eigen::MatrixXd::Zero(2, 1), RealVector::Zero(2),
                                            (RealVector(2) << 1.2, 0.0).finished(), Eigen::VectorXd::Constant(2, 0.04), 0.5);
  const ExpertEnergy field(e, sched);
  Rng rng(6);
  const SampleBatch b = sample_batch(field, sched, Eigen::MatrixXd::Zero(1, 2000), OdeConfig{200, 1e-3}, rng);
  const auto modes = e.modes(RealVector::Zero(1));
  int near = 0, first = 0, second = 0;
  for (Eigen::Index i = 0; i < b.actions.cols(); ++i) {
    const RealVector a = b.actions.col(i);
    const double d0 = (a - modes[0]).norm(), d1 = (a - modes[1]).norm();
    if (std::min(d0, d1) <= 3.0 * 0.2 * std::sqrt(2.0)) ++near;
    (d0 < d1 ? first : second)++;
  }
  EXPECT_GE(near, 0.95 * 2000);
  EXPECT_GE(first, 0.2 * 2000);
  EXPECT_GE(second, 0.2 * 2000);
}
