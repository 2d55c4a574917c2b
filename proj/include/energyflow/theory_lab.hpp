#pragma once

// Conservative versus unconstrained vector-field regression under domain
// shift, and the consolidated property checks for a trained energy net.
//
// Both hypothesis classes read out the Jacobian of one frozen random Mish
// feature map phi: R^d -> R^k. The conservative class is grad(w . phi), i.e.
// f(x) = J(x)^T w. The unconstrained class gives every output coordinate its
// own readout, f_i(x) = W_i . dphi/dx_i; it contains the conservative class
// (all rows equal) and coincides with it at d = 1.

#include "energyflow/autodiff.hpp"
#include "energyflow/energy_model.hpp"
#include "energyflow/mathcore.hpp"
#include "energyflow/reward.hpp"
#include "energyflow/schedule.hpp"
#include "energyflow/synth_env.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <string>
#include <vector>

namespace energyflow {

enum class FieldKind { conservative, unconstrained };

inline const char* to_string(FieldKind k) { return k == FieldKind::conservative ? "conservative" : "unconstrained"; }

/// phi(x) = mish(W2 mish(W1 x + b1) + b2), frozen after construction.
struct FeatureMap {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  /// Fan-in scaled Gaussian weights; pre-activations stay O(1) for inputs
  /// of unit scale regardless of in_dim.
  static FeatureMap random(int in_dim, int hidden, int k, Rng& rng) {
    if (in_dim < 1 || hidden < 1 || k < 1) throw std::invalid_argument("FeatureMap: dimensions must be positive");
    FeatureMap f;
    f.w1 = Eigen::MatrixXd::NullaryExpr(hidden, in_dim, [&] { return rng.normal() / std::sqrt(in_dim); });
    f.b1 = Eigen::VectorXd::NullaryExpr(hidden, [&] { return 0.5 * rng.normal(); });
    f.w2 = Eigen::MatrixXd::NullaryExpr(k, hidden, [&] { return rng.normal() / std::sqrt(hidden); });
    f.b2 = Eigen::VectorXd::NullaryExpr(k, [&] { return 0.5 * rng.normal(); });
    return f;
  }

  int in_dim() const { return static_cast<int>(w1.cols()); }
  int out_dim() const { return static_cast<int>(w2.rows()); }

  RealVector features(const RealVector& x) const {
    const Eigen::VectorXd h = (w1 * x + b1).unaryExpr([](double v) { return autodiff::mish(v); });
    return (w2 * h + b2).unaryExpr([](double v) { return autodiff::mish(v); });
  }

  /// d phi / d x, k x d.
  Eigen::MatrixXd jacobian(const RealVector& x) const {
    const Eigen::VectorXd u = w1 * x + b1;
    Eigen::VectorXd h(u.size()), dh(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const auto m = autodiff::mish_derivatives(u[i]);
      h[i] = m.value;
      dh[i] = m.first;
    }
    const Eigen::VectorXd z = w2 * h + b2;
    const Eigen::VectorXd dz = z.unaryExpr([](double v) { return autodiff::mish_derivatives(v).first; });
    return dz.asDiagonal() * w2 * dh.asDiagonal() * w1;
  }
};

/// h* = grad(w_base . phi(x) + w_extra . psi(x)): a potential over phi plus
/// features the hypotheses do not have, so neither class is exact.
struct GroundTruthField {
  const FeatureMap* base = nullptr;
  RealVector w_base;
  FeatureMap extra;
  RealVector w_extra;

  RealVector field(const RealVector& x) const { return in_class_part(x) + out_of_class_part(x); }
  RealVector in_class_part(const RealVector& x) const { return base->jacobian(x).transpose() * w_base; }
  RealVector out_of_class_part(const RealVector& x) const { return extra.jacobian(x).transpose() * w_extra; }
};

struct FieldHypothesis {
  FieldKind kind = FieldKind::conservative;
  const FeatureMap* phi = nullptr;
  Eigen::MatrixXd readout;  // conservative: 1 x k; unconstrained: d x k

  RealVector field(const RealVector& x) const {
    const Eigen::MatrixXd j = phi->jacobian(x);
    RealVector f(j.cols());
    for (Eigen::Index i = 0; i < j.cols(); ++i)
      f[i] = readout.row(kind == FieldKind::conservative ? 0 : i).dot(j.col(i));
    return f;
  }
};

inline constexpr double kRidgeFloor = 1e-8;

/// Ridge least squares minimizing (1/n) sum_i ||f(x_i) - y_i||^2 +
/// ridge ||readout||_F^2 over the readout. xs and ys are d x n. Ridge below
/// 1e-8 is raised to 1e-8.
inline FieldHypothesis fit_hypothesis(FieldKind kind, const FeatureMap& phi, const Eigen::MatrixXd& xs,
                                      const Eigen::MatrixXd& ys, double ridge) {
  const Eigen::Index d = xs.rows(), n = xs.cols();
  const int k = phi.out_dim();
  if (n == 0) throw std::invalid_argument("fit_hypothesis: empty training set");
  if (ys.rows() != d || ys.cols() != n || d != phi.in_dim())
    throw std::invalid_argument("fit_hypothesis: dimension mismatch");
  const double lam = std::max(ridge, kRidgeFloor);

  // per-output-coordinate normal equations; the conservative fit sums them
  std::vector<Eigen::MatrixXd> gram(static_cast<std::size_t>(d), Eigen::MatrixXd::Zero(k, k));
  std::vector<Eigen::VectorXd> rhs(static_cast<std::size_t>(d), Eigen::VectorXd::Zero(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::MatrixXd j = phi.jacobian(xs.col(i));
    for (Eigen::Index c = 0; c < d; ++c) {
      gram[static_cast<std::size_t>(c)].noalias() += j.col(c) * j.col(c).transpose();
      rhs[static_cast<std::size_t>(c)].noalias() += ys(c, i) * j.col(c);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd reg = lam * Eigen::MatrixXd::Identity(k, k);
  FieldHypothesis h;
  h.kind = kind;
  h.phi = &phi;
  if (kind == FieldKind::conservative) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(k);
    for (Eigen::Index c = 0; c < d; ++c) {
      a += gram[static_cast<std::size_t>(c)];
      b += rhs[static_cast<std::size_t>(c)];
    }
    h.readout = (inv_n * a + reg).ldlt().solve(inv_n * b).transpose();
  } else {
    h.readout.resize(d, k);
    for (Eigen::Index c = 0; c < d; ++c)
      h.readout.row(c) = (inv_n * gram[static_cast<std::size_t>(c)] + reg).ldlt().solve(inv_n * rhs[static_cast<std::size_t>(c)]).transpose();
  }
  return h;
}

/// Axis-aligned box [lo + shift, hi + shift]^d.
struct Region {
  int dim = 1;
  double lo = -1.0;
  double hi = 1.0;
  double shift = 0.0;

  RealVector draw(Rng& rng) const {
    RealVector x(dim);
    for (int i = 0; i < dim; ++i) x[i] = rng.uniform(lo + shift, hi + shift);
    return x;
  }
  Eigen::MatrixXd draw_many(Eigen::Index n, Rng& rng) const {
    Eigen::MatrixXd xs(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) xs.col(i) = draw(rng);
    return xs;
  }
};

/// Mean squared field error over the given points.
template <typename Field, typename Truth>
double mean_sq_error(const Field& f, const Truth& truth, const Eigen::MatrixXd& xs) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < xs.cols(); ++i) total += (f(xs.col(i)) - truth(xs.col(i))).squaredNorm();
  return total / static_cast<double>(xs.cols());
}

/// Monte Carlo E ||f(x) - h*(x)||^2 over the region.
inline double ood_risk(const FieldHypothesis& f, const Region& region, const GroundTruthField& truth, int n_eval, Rng& rng) {
  if (n_eval < 1000) throw std::invalid_argument("ood_risk: n_eval must be >= 1000");
  const Eigen::MatrixXd xs = region.draw_many(n_eval, rng);
  return mean_sq_error([&](const RealVector& x) { return f.field(x); }, [&](const RealVector& x) { return truth.field(x); }, xs);
}

struct TheoryConfig {
  std::vector<int> dims{1, 2, 4, 8, 16, 32};
  std::vector<double> shifts{0.0, 0.5, 1.0, 2.0};  // levels 0, S, M, L
  int seeds = 10;
  int n_train = 200;
  int n_eval = 2000;
  int hidden = 64;
  int features = 32;
  int extra_features = 32;
  double extra_scale = 0.05;
  double noise_std = 0.01;
  double ridge = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (dims.empty() || shifts.empty() || seeds < 1) throw std::invalid_argument("TheoryConfig: empty sweep");
    for (int d : dims)
      if (d < 1) throw std::invalid_argument("TheoryConfig: dimensions must be positive");
    if (n_train < 1 || n_eval < 1000) throw std::invalid_argument("TheoryConfig: n_train >= 1 and n_eval >= 1000 required");
    if (hidden < 1 || features < 1 || extra_features < 1) throw std::invalid_argument("TheoryConfig: widths must be positive");
    if (!(noise_std >= 0.0) || !(ridge >= 0.0) || !(extra_scale >= 0.0))
      throw std::invalid_argument("TheoryConfig: noise, ridge and extra_scale must be non-negative");
  }
};

inline const char* shift_label(std::size_t level) {
  static const char* names[] = {"0", "S", "M", "L"};
  return level < 4 ? names[level] : "X";
}

struct TrialRow {
  int seed = 0;
  int dim = 0;
  double shift = 0.0;
  FieldKind kind = FieldKind::conservative;
  double train_mse = 0.0;
  double risk = 0.0;
  double approx_error = 0.0;  // risk of the in-class part of h* on the target region
};

/// Mean ||f(x_i) - y_i||^2 over a training set.
inline double train_mse(const FieldHypothesis& f, const Eigen::MatrixXd& xs, const Eigen::MatrixXd& ys) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < xs.cols(); ++i) total += (f.field(xs.col(i)) - ys.col(i)).squaredNorm();
  return total / static_cast<double>(xs.cols());
}

/// One trial: shared phi and h*, one training set, both classes fitted and
/// evaluated at every shift. Two rows per shift, conservative first.
inline std::vector<TrialRow> run_trial(const TheoryConfig& cfg, int dim, int seed) {
  const std::uint64_t stream = static_cast<std::uint64_t>(seed) * 1000003ULL + static_cast<std::uint64_t>(dim);
  Rng rng(cfg.seed, 0x7472ULL + stream);
  const FeatureMap phi = FeatureMap::random(dim, cfg.hidden, cfg.features, rng);
  GroundTruthField truth;
  truth.base = &phi;
  truth.w_base = RealVector::NullaryExpr(cfg.features, [&] { return rng.normal(); });
  truth.extra = FeatureMap::random(dim, cfg.hidden, cfg.extra_features, rng);
  truth.w_extra = RealVector::NullaryExpr(cfg.extra_features, [&] { return cfg.extra_scale * rng.normal(); });

  const Region source{dim, -1.0, 1.0, 0.0};
  const Eigen::MatrixXd xs = source.draw_many(cfg.n_train, rng);
  Eigen::MatrixXd ys(dim, cfg.n_train);
  for (int i = 0; i < cfg.n_train; ++i) {
    ys.col(i) = truth.field(xs.col(i));
    for (int c = 0; c < dim; ++c) ys(c, i) += cfg.noise_std * rng.normal();
  }
  const FieldHypothesis hyps[2] = {fit_hypothesis(FieldKind::conservative, phi, xs, ys, cfg.ridge),
                                   fit_hypothesis(FieldKind::unconstrained, phi, xs, ys, cfg.ridge)};
  const double mse[2] = {train_mse(hyps[0], xs, ys), train_mse(hyps[1], xs, ys)};
  std::vector<TrialRow> rows;
  for (double shift : cfg.shifts) {
    const Region target{dim, -1.0, 1.0, shift};
    Rng eval_rng(cfg.seed, 0x6576ULL + stream);
    const Eigen::MatrixXd xe = target.draw_many(cfg.n_eval, eval_rng);
    auto truth_at = [&](const RealVector& x) { return truth.field(x); };
    const double approx = mean_sq_error([&](const RealVector& x) { return truth.in_class_part(x); }, truth_at, xe);
    for (int h = 0; h < 2; ++h) {
      TrialRow r;
      r.seed = seed;
      r.dim = dim;
      r.shift = shift;
      r.kind = hyps[h].kind;
      r.train_mse = mse[h];
      r.risk = mean_sq_error([&](const RealVector& x) { return hyps[h].field(x); }, truth_at, xe);
      r.approx_error = approx;
      rows.push_back(r);
    }
  }
  return rows;
}

struct SweepCell {
  int dim = 0;
  double shift = 0.0;
  double median_conservative = 0.0;
  double median_unconstrained = 0.0;
  int conservative_wins = 0;  // seeds with conservative risk < unconstrained risk
  double sign_test_p = 1.0;   // two-sided, paired over seeds
  double median_approx_error = 0.0;
};

struct SweepReport {
  std::vector<TrialRow> rows;
  std::vector<SweepCell> cells;
  double largest_shift = 0.0;
  double slope_conservative = 0.0;  // log median risk vs log d at the largest shift, d >= 2
  double slope_unconstrained = 0.0;

  const SweepCell& cell(int dim, double shift) const {
    for (const auto& c : cells)
      if (c.dim == dim && c.shift == shift) return c;
    throw std::out_of_range("SweepReport: no such cell");
  }
};

/// All (dim, seed) trials, per-cell medians and paired statistics, and the
/// log-log risk slopes at the largest shift.
inline SweepReport run_dimension_sweep(const TheoryConfig& cfg) {
  cfg.validate();
  SweepReport rep;
  for (int d : cfg.dims)
    for (int seed = 0; seed < cfg.seeds; ++seed) {
      auto rows = run_trial(cfg, d, seed);
      rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
    }
  rep.largest_shift = *std::max_element(cfg.shifts.begin(), cfg.shifts.end());
  std::vector<double> log_d, log_c, log_u;
  for (int d : cfg.dims)
    for (double shift : cfg.shifts) {
      std::vector<double> rc, ru, diff, approx;
      for (std::size_t i = 0; i + 1 < rep.rows.size(); i += 2) {
        const TrialRow& c = rep.rows[i];
        const TrialRow& u = rep.rows[i + 1];
        if (c.dim != d || c.shift != shift) continue;
        rc.push_back(c.risk);
        ru.push_back(u.risk);
        diff.push_back(c.risk - u.risk);
        approx.push_back(c.approx_error);
      }
      SweepCell cell;
      cell.dim = d;
      cell.shift = shift;
      cell.median_conservative = median(rc);
      cell.median_unconstrained = median(ru);
      for (double x : diff) cell.conservative_wins += x < 0.0 ? 1 : 0;
      cell.sign_test_p = sign_test_p_value(diff);
      cell.median_approx_error = median(approx);
      rep.cells.push_back(cell);
      if (shift == rep.largest_shift && d >= 2) {
        log_d.push_back(std::log(d));
        log_c.push_back(std::log(cell.median_conservative));
        log_u.push_back(std::log(cell.median_unconstrained));
      }
    }
  if (log_d.size() >= 2) {
    rep.slope_conservative = fitted_slope(log_d, log_c);
    rep.slope_unconstrained = fitted_slope(log_d, log_u);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// property suite for a trained energy net

struct PropertyThresholds {
  double offset_std = 0.1;
  double symmetry = 1e-10;
  double ranking_gaussian = 0.95;
  double ranking_mixture = 0.90;
  double preference_fraction = 1.0;
};

struct PropertyConfig {
  double gamma = 1e-3;
  int states = 50;
  int grid_points = 21;         // per axis, ranking and offset grids
  int eta_grid_points = 41;     // per axis, eta_hat grid
  int preference_pairs = 500;
  int symmetry_points = 1000;
  double grid_width = 2.0;      // conditional standard deviations
  std::uint64_t seed = 0;
  PropertyThresholds thresholds;
};

struct PropertyCheck {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

struct PropertyReport {
  std::vector<PropertyCheck> checks;
  double cross_state_offset_std = 0.0;  // reported, not bounded
  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }
};

/// Kendall tau restricted to each mode's basin (grid points nearer that
/// mode), averaged over modes; the plain tau for a Gaussian expert.
template <EnergyField F>
double basin_ranking_fidelity(const F& field, const ExpertSpec& expert, const RealVector& s, const Eigen::MatrixXd& grid,
                              double gamma) {
  if (expert.kind == ExpertKind::gaussian) return ranking_fidelity(field, expert, s, grid, gamma);
  const auto modes = expert.modes(s);
  double total = 0.0;
  for (std::size_t m = 0; m < modes.size(); ++m) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index c = 0; c < grid.cols(); ++c) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < modes.size(); ++j)
        if ((grid.col(c) - modes[j]).norm() < (grid.col(c) - modes[best]).norm()) best = j;
      if (best == m) cols.push_back(c);
    }
    Eigen::MatrixXd sub(grid.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = grid.col(cols[i]);
    total += ranking_fidelity(field, expert, s, sub, gamma);
  }
  return total / static_cast<double>(modes.size());
}

/// Offset variance, Jacobian symmetry, within-state ranking and the
/// Lipschitz preference bound on one net. `expert` and `states` are in the
/// net's (standardized) units.
inline PropertyReport run_property_suite(const EnergyNet& net, const ExpertSpec& expert, const NoiseSchedule& sched,
                                         const std::vector<RealVector>& states, const PropertyConfig& cfg) {
  if (states.empty()) throw std::invalid_argument("run_property_suite: no states");
  PropertyReport rep;
  const double gamma = cfg.gamma;
  auto grid_of = [&](const RealVector& s) { return expert_grid(expert, s, cfg.grid_points, cfg.grid_width); };

  const OffsetVariance ov = state_offset_variance(net, expert, states, grid_of, gamma);
  rep.cross_state_offset_std = ov.cross_state_std;
  rep.checks.push_back({"offset_std", ov.mean_per_state_std(), cfg.thresholds.offset_std,
                        ov.mean_per_state_std() < cfg.thresholds.offset_std});

  Rng rng(cfg.seed, 0x73796dULL);
  double worst = 0.0;
  for (int i = 0; i < cfg.symmetry_points; ++i) {
    const RealVector& s = states[static_cast<std::size_t>(i) % states.size()];
    const RealVector a = gaussian_sample(rng, net.action_dim());
    const double t = rng.uniform(gamma, sched.horizon);
    worst = std::max(worst, sym_defect(net.score_jacobian(a, s, t)));
  }
  rep.checks.push_back({"symmetry_defect", worst, cfg.thresholds.symmetry, worst < cfg.thresholds.symmetry});

  std::vector<double> taus;
  for (const RealVector& s : states) taus.push_back(basin_ranking_fidelity(net, expert, s, grid_of(s), gamma));
  const double tau_threshold =
      expert.kind == ExpertKind::gaussian ? cfg.thresholds.ranking_gaussian : cfg.thresholds.ranking_mixture;
  rep.checks.push_back({"ranking_tau", mean(taus), tau_threshold, mean(taus) >= tau_threshold});

  const RealVector& s0 = states.front();
  const Eigen::MatrixXd eta_grid = expert_grid(expert, s0, cfg.eta_grid_points, cfg.grid_width);
  const RealVector lo = eta_grid.rowwise().minCoeff(), hi = eta_grid.rowwise().maxCoeff();
  std::vector<std::pair<RealVector, RealVector>> pairs;
  for (int i = 0; i < cfg.preference_pairs; ++i) {
    RealVector a(lo.size()), b(lo.size());
    for (Eigen::Index k = 0; k < lo.size(); ++k) {
      a[k] = rng.uniform(lo[k], hi[k]);
      b[k] = rng.uniform(lo[k], hi[k]);
    }
    pairs.emplace_back(a, b);
  }
  const PreferenceReport pr = lipschitz_preference_check(net, expert, sched, s0, pairs, eta_grid, gamma);
  const double frac = pr.pairs ? static_cast<double>(pr.satisfied) / pr.pairs : 0.0;
  rep.checks.push_back({"preference_bound_fraction", frac, cfg.thresholds.preference_fraction,
                        frac >= cfg.thresholds.preference_fraction});
  return rep;
}

}  // namespace energyflow
