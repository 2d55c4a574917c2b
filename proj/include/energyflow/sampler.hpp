#pragma once

// Probability-flow ODE sampling by explicit Euler steps from t = T down to
// the endpoint gamma:
//   a_{k+1} = a_k - dt * 0.5 * d[sigma^2]/dt(t_k) * grad_a E(a_k, s, t_k)

#include "energyflow/autodiff.hpp"
#include "energyflow/mathcore.hpp"
#include "energyflow/schedule.hpp"

#include <concepts>
#include <vector>

namespace energyflow {

/// Anything exposing batched energies and action gradients (column per
/// sample): the learned EnergyNet or an analytic expert energy.
template <typename F>
concept EnergyField = requires(const F& f, const Eigen::MatrixXd& a, const Eigen::MatrixXd& s, const Eigen::MatrixXd& t) {
  { f.action_dim() } -> std::convertible_to<int>;
  { f.energy_gradients(a, s, t) } -> std::convertible_to<Eigen::MatrixXd>;
  { f.energies(a, s, t) } -> std::convertible_to<Eigen::RowVectorXd>;
};

struct OdeConfig {
  int steps = 20;
  double gamma = 1e-3;

  void validate(double horizon) const {
    if (steps < 1) throw std::invalid_argument("OdeConfig: steps must be >= 1");
    if (!(gamma > 0.0 && gamma < horizon)) throw std::invalid_argument("OdeConfig: gamma must lie in (0, T)");
  }
};

struct SampleResult {
  RealVector action;
  double energy = 0.0;
};

struct SampleBatch {
  Eigen::MatrixXd actions;    // action_dim x n
  Eigen::RowVectorXd energies;
};

/// One Euler step for every column of `actions` at the shared time t_k.
template <EnergyField F>
Eigen::MatrixXd euler_step(const F& field, const NoiseSchedule& sched, const Eigen::MatrixXd& actions,
                           const Eigen::MatrixXd& states, double t_k, double dt, long step_index = 0) {
  if (!(dt > 0.0)) throw std::invalid_argument("euler_step: dt must be positive");
  const Eigen::MatrixXd times = Eigen::MatrixXd::Constant(1, actions.cols(), t_k);
  const Eigen::MatrixXd g = field.energy_gradients(actions, states, times);
  if (!g.allFinite()) throw sampler_divergence("non-finite energy gradient", step_index);
  return actions - (dt * 0.5 * sched.dsigma2_dt(t_k)) * g;
}

/// Integrates K Euler steps from the given initial actions (column per
/// sample) and returns the endpoint actions with E(a_K, s, gamma).
template <EnergyField F>
SampleBatch integrate_flow(const F& field, const NoiseSchedule& sched, Eigen::MatrixXd actions,
                           const Eigen::MatrixXd& states, const OdeConfig& cfg) {
  cfg.validate(sched.horizon);
  const double dt = (sched.horizon - cfg.gamma) / cfg.steps;
  for (int k = 0; k < cfg.steps; ++k) {
    const double t_k = sched.horizon - k * dt;
    actions = euler_step(field, sched, actions, states, t_k, dt, k);
  }
  SampleBatch out;
  out.energies = field.energies(actions, states, Eigen::MatrixXd::Constant(1, actions.cols(), cfg.gamma));
  if (!actions.allFinite() || !out.energies.allFinite()) throw sampler_divergence("non-finite sample", cfg.steps);
  out.actions = std::move(actions);
  return out;
}

/// One draw: a_T ~ N(0, sigma(T)^2 I) from `rng`, then the flow.
template <EnergyField F>
SampleResult sample(const F& field, const NoiseSchedule& sched, const RealVector& state, const OdeConfig& cfg, Rng& rng) {
  const double sig_t = sched.sigma(sched.horizon);
  Eigen::MatrixXd a0 = sig_t * gaussian_sample(rng, field.action_dim());
  const SampleBatch b = integrate_flow(field, sched, std::move(a0), Eigen::MatrixXd(state), cfg);
  return {b.actions.col(0), b.energies[0]};
}

/// Column i draws its initial noise from substream i of a key taken from
/// `rng`, so element i does not depend on the batch size.
template <EnergyField F>
SampleBatch sample_batch(const F& field, const NoiseSchedule& sched, const Eigen::MatrixXd& states, const OdeConfig& cfg,
                         Rng& rng) {
  const Eigen::Index n = states.cols();
  const Rng base(rng.next_u64());
  if (n == 0) return {Eigen::MatrixXd(field.action_dim(), 0), Eigen::RowVectorXd(0)};
  const double sig_t = sched.sigma(sched.horizon);
  Eigen::MatrixXd a0(field.action_dim(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    a0.col(i) = sig_t * gaussian_sample(r, field.action_dim());
  }
  return integrate_flow(field, sched, std::move(a0), states, cfg);
}

}  // namespace energyflow
