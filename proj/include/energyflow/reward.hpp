#pragma once

// Rewards read off a learned energy, and the measurements that compare an
// energy against an analytic expert: within-state ranking, the
// state-dependent offset, the Lipschitz preference bound and the gamma sweep.

#include "energyflow/mathcore.hpp"
#include "energyflow/sampler.hpp"
#include "energyflow/synth_env.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace energyflow {

enum class RewardMode { sparse, raw, centered, centered_plus_sparse, oracle_dense };

inline const char* to_string(RewardMode m) {
  switch (m) {
    case RewardMode::sparse: return "sparse";
    case RewardMode::raw: return "raw";
    case RewardMode::centered: return "centered";
    case RewardMode::centered_plus_sparse: return "centered_plus_sparse";
    case RewardMode::oracle_dense: return "oracle_dense";
  }
  return "?";
}

inline RewardMode reward_mode_from_string(const std::string& s) {
  for (RewardMode m : {RewardMode::sparse, RewardMode::raw, RewardMode::centered, RewardMode::centered_plus_sparse,
                       RewardMode::oracle_dense})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown reward mode: " + s);
}

struct RewardConfig {
  double gamma = 1e-3;
  int baseline_samples = 16;
  double alpha = 1.0;
  double energy_scale = 1.0;  // weight of the energy term in centered_plus_sparse
  RewardMode mode = RewardMode::centered;

  void validate(double horizon) const {
    if (baseline_samples < 1) throw std::invalid_argument("RewardConfig: baseline_samples must be >= 1");
    if (!(gamma > 0.0 && gamma < horizon)) throw std::invalid_argument("RewardConfig: gamma must lie in (0, T)");
    if (!(alpha > 0.0)) throw std::invalid_argument("RewardConfig: alpha must be positive");
  }
};

/// Frozen N(0, I) reference actions (action_dim x M) for the baseline.
inline Eigen::MatrixXd reference_actions(int action_dim, int m, std::uint64_t seed) {
  Rng rng(seed, 0x62617365ULL);
  Eigen::MatrixXd refs(action_dim, m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < action_dim; ++i) refs(i, j) = rng.normal();
  return refs;
}

template <EnergyField F>
double energy_at(const F& field, const RealVector& a, const RealVector& s, double t) {
  return field.energies(Eigen::MatrixXd(a), Eigen::MatrixXd(s), Eigen::MatrixXd::Constant(1, 1, t))[0];
}

/// Energies of every grid column at a single state.
template <EnergyField F>
Eigen::RowVectorXd grid_energies(const F& field, const RealVector& s, const Eigen::MatrixXd& grid, double t) {
  const Eigen::MatrixXd states = s.replicate(1, grid.cols());
  return field.energies(grid, states, Eigen::MatrixXd::Constant(1, grid.cols(), t));
}

/// Raw and centered rewards for one energy with a frozen reference set. All
/// inputs are in the units the energy was trained in.
template <EnergyField F>
class EnergyReward {
 public:
  EnergyReward(const F& field, RewardConfig cfg, std::uint64_t seed, double horizon = 1.0)
      : field_(&field), cfg_(cfg), refs_(reference_actions(field.action_dim(), cfg.baseline_samples, seed)) {
    cfg_.validate(horizon);
  }

  const RewardConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& references() const { return refs_; }

  /// -alpha * E(a, s, gamma)
  double raw(const RealVector& a, const RealVector& s) const { return -cfg_.alpha * energy_at(*field_, a, s, cfg_.gamma); }

  /// Mean energy of the reference actions at state s.
  double baseline(const RealVector& s) const { return grid_energies(*field_, s, refs_, cfg_.gamma).mean(); }

  /// -(E(a, s, gamma) - baseline(s))
  double centered(const RealVector& a, const RealVector& s) const {
    return -(energy_at(*field_, a, s, cfg_.gamma) - baseline(s));
  }

  /// Batched raw / centered rewards, one per column.
  Eigen::RowVectorXd raw_batch(const Eigen::MatrixXd& actions, const Eigen::MatrixXd& states) const {
    return -cfg_.alpha * field_->energies(actions, states, Eigen::MatrixXd::Constant(1, actions.cols(), cfg_.gamma));
  }

  Eigen::RowVectorXd centered_batch(const Eigen::MatrixXd& actions, const Eigen::MatrixXd& states) const {
    const Eigen::Index n = actions.cols();
    const int m = static_cast<int>(refs_.cols());
    Eigen::MatrixXd all_a(actions.rows(), n * (m + 1)), all_s(states.rows(), n * (m + 1));
    all_a.leftCols(n) = actions;
    all_s.leftCols(n) = states;
    for (Eigen::Index i = 0; i < n; ++i) {
      all_a.block(0, n + i * m, actions.rows(), m) = refs_;
      all_s.block(0, n + i * m, states.rows(), m) = states.col(i).replicate(1, m);
    }
    const Eigen::RowVectorXd e = field_->energies(all_a, all_s, Eigen::MatrixXd::Constant(1, all_a.cols(), cfg_.gamma));
    Eigen::RowVectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = -(e[i] - e.segment(n + i * m, m).mean());
    return out;
  }

 private:
  const F* field_;
  RewardConfig cfg_;
  Eigen::MatrixXd refs_;
};

// ---------------------------------------------------------------------------
// grids

/// n^d points on the box [lo, hi]^d (first coordinate varies fastest).
inline Eigen::MatrixXd box_grid(int dim, int n, double lo, double hi) {
  if (dim < 1 || n < 1) throw std::invalid_argument("box_grid: dim and n must be positive");
  Eigen::Index total = 1;
  for (int i = 0; i < dim; ++i) total *= n;
  Eigen::MatrixXd g(dim, total);
  for (Eigen::Index c = 0; c < total; ++c) {
    Eigen::Index r = c;
    for (int i = 0; i < dim; ++i) {
      const Eigen::Index k = r % n;
      r /= n;
      g(i, c) = n == 1 ? 0.5 * (lo + hi) : lo + (hi - lo) * static_cast<double>(k) / (n - 1);
    }
  }
  return g;
}

/// Grid of n points per axis centred on the expert's conditional mean at s,
/// spanning +/- `width` conditional standard deviations per coordinate
/// (mode separation included for mixture2).
inline Eigen::MatrixXd expert_grid(const ExpertSpec& e, const RealVector& s, int n, double width = 2.0) {
  const RealVector center = e.mean(s);
  const Eigen::VectorXd half = width * (e.cov_diag.array() + e.mode_offset.array().square()).sqrt();
  Eigen::MatrixXd g = box_grid(e.action_dim(), n, -1.0, 1.0);
  return (g.array().colwise() * half.array()).matrix().colwise() + center;
}

// ---------------------------------------------------------------------------
// within-state structure

/// Grid indices sorted by ascending energy at (s, ., gamma); ties keep
/// index order.
template <EnergyField F>
std::vector<int> within_state_ranking(const F& field, const RealVector& s, const Eigen::MatrixXd& grid, double gamma) {
  if (grid.cols() == 0) throw std::invalid_argument("within_state_ranking: empty grid");
  const Eigen::RowVectorXd e = grid_energies(field, s, grid, gamma);
  std::vector<int> idx(static_cast<std::size_t>(grid.cols()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int i, int j) { return e[i] < e[j]; });
  return idx;
}

/// Kendall tau between E(., s, gamma) and -Q*(s, .) over the grid.
template <EnergyField F>
double ranking_fidelity(const F& field, const ExpertSpec& expert, const RealVector& s, const Eigen::MatrixXd& grid,
                        double gamma) {
  const Eigen::RowVectorXd e = grid_energies(field, s, grid, gamma);
  std::vector<double> ev(e.data(), e.data() + e.size()), nq(static_cast<std::size_t>(grid.cols()));
  for (Eigen::Index c = 0; c < grid.cols(); ++c) nq[static_cast<std::size_t>(c)] = -analytic_q(expert, grid.col(c), s);
  return kendall_tau(ev, nq);
}

struct OffsetVariance {
  std::vector<double> per_state_std;
  std::vector<double> per_state_mean;
  double cross_state_std = 0.0;
  double mean_per_state_std() const { return mean(per_state_std); }
};

/// Residual R(a, s) = E(a, s, gamma) + Q*(s, a) / alpha: its spread over
/// actions per state (population std) and the spread of per-state means.
/// `grid_of(s)` supplies the action grid for each state.
template <EnergyField F, typename GridOf>
OffsetVariance state_offset_variance(const F& field, const ExpertSpec& expert, const std::vector<RealVector>& states,
                                     GridOf&& grid_of, double gamma) {
  OffsetVariance out;
  for (const RealVector& s : states) {
    const Eigen::MatrixXd grid = grid_of(s);
    const Eigen::RowVectorXd e = grid_energies(field, s, grid, gamma);
    std::vector<double> r(static_cast<std::size_t>(grid.cols()));
    for (Eigen::Index c = 0; c < grid.cols(); ++c)
      r[static_cast<std::size_t>(c)] = e[c] + analytic_q(expert, grid.col(c), s) / expert.alpha;
    out.per_state_std.push_back(population_stddev(r));
    out.per_state_mean.push_back(mean(r));
  }
  out.cross_state_std = out.per_state_mean.size() > 1 ? population_stddev(out.per_state_mean) : 0.0;
  return out;
}

/// Largest ||S_phi(a, s, gamma) - S*_sigma(gamma)(a, s)|| over the columns of
/// `points`.
template <EnergyField F>
double max_score_error(const F& field, const ExpertSpec& expert, const NoiseSchedule& sched, const RealVector& s,
                       const Eigen::MatrixXd& points, double gamma) {
  const Eigen::MatrixXd states = s.replicate(1, points.cols());
  const Eigen::MatrixXd g = field.energy_gradients(points, states, Eigen::MatrixXd::Constant(1, points.cols(), gamma));
  const double sig = sched.sigma(gamma);
  double worst = 0.0;
  for (Eigen::Index c = 0; c < points.cols(); ++c)
    worst = std::max(worst, (-g.col(c) - analytic_score(expert, points.col(c), s, sig)).norm());
  return worst;
}

struct PreferenceReport {
  double eta_hat = 0.0;
  int pairs = 0;
  int satisfied = 0;
  double worst_slack = 0.0;  // max of |dE - dE*| - eta * ||a - a'||
};

/// Checks |dE_phi - dE*| <= eta_hat ||a - a'|| + tol for every pair, where
/// dE* is the exact change of the expert's noised energy -log p_sigma(gamma)
/// and eta_hat is the largest score error over `eta_points` and the pair
/// endpoints.
template <EnergyField F>
PreferenceReport lipschitz_preference_check(const F& field, const ExpertSpec& expert, const NoiseSchedule& sched,
                                            const RealVector& s, const std::vector<std::pair<RealVector, RealVector>>& pairs,
                                            const Eigen::MatrixXd& eta_points, double gamma, double tol = 1e-6) {
  PreferenceReport rep;
  Eigen::MatrixXd ends(expert.action_dim(), static_cast<Eigen::Index>(2 * pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    ends.col(static_cast<Eigen::Index>(2 * i)) = pairs[i].first;
    ends.col(static_cast<Eigen::Index>(2 * i + 1)) = pairs[i].second;
  }
  rep.eta_hat = max_score_error(field, expert, sched, s, eta_points, gamma);
  if (!pairs.empty()) rep.eta_hat = std::max(rep.eta_hat, max_score_error(field, expert, sched, s, ends, gamma));
  const double sig = sched.sigma(gamma);
  const Eigen::RowVectorXd e = pairs.empty() ? Eigen::RowVectorXd() : grid_energies(field, s, ends, gamma);
  rep.worst_slack = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [a, b] = pairs[i];
    const double de = e[static_cast<Eigen::Index>(2 * i + 1)] - e[static_cast<Eigen::Index>(2 * i)];
    const double de_star = -analytic_log_density(expert, b, s, sig) + analytic_log_density(expert, a, s, sig);
    const double slack = std::abs(de - de_star) - rep.eta_hat * (a - b).norm();
    rep.worst_slack = std::max(rep.worst_slack, slack);
    ++rep.pairs;
    if (slack <= tol) ++rep.satisfied;
  }
  return rep;
}

struct GammaSweepRow {
  double gamma = 0.0;
  double tau = 0.0;
};

/// Mean ranking fidelity over `states` for each gamma.
template <EnergyField F, typename GridOf>
std::vector<GammaSweepRow> gamma_sweep(const F& field, const ExpertSpec& expert, const std::vector<RealVector>& states,
                                       GridOf&& grid_of, const std::vector<double>& gammas) {
  std::vector<GammaSweepRow> rows;
  for (double g : gammas) {
    std::vector<double> taus;
    for (const RealVector& s : states) taus.push_back(ranking_fidelity(field, expert, s, grid_of(s), g));
    rows.push_back({g, mean(taus)});
  }
  return rows;
}

inline const std::vector<double>& default_gamma_sweep() {
  static const std::vector<double> g{1e-4, 1e-3, 1e-2, 1e-1, 0.5};
  return g;
}

}  // namespace energyflow
