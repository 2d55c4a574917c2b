#pragma once

// Worlds with analytically known ground truth: Boltzmann experts whose soft Q
// function, policy score and noised score are closed form, demonstration
// sets with per-coordinate standardization, and a small goal-reaching MDP.

#include "energyflow/mathcore.hpp"
#include "energyflow/schedule.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace energyflow {

enum class ExpertKind { gaussian, mixture2 };

inline const char* to_string(ExpertKind k) { return k == ExpertKind::gaussian ? "gaussian" : "mixture2"; }

/// Boltzmann expert pi(a|s) ∝ exp(Q*(s,a)/alpha).
///
/// gaussian : Q* = -alpha/2 (a - mu(s))^T Sigma^-1 (a - mu(s)), so pi = N(mu(s), Sigma)
/// mixture2 : Q* = alpha log[w N(a; mu(s)+delta, Sigma) + (1-w) N(a; mu(s)-delta, Sigma)]
///
/// with mu(s) = gain * s + offset and diagonal Sigma.
struct ExpertSpec {
  ExpertKind kind = ExpertKind::gaussian;
  Eigen::MatrixXd gain;          // action_dim x state_dim
  Eigen::VectorXd offset;        // action_dim
  Eigen::VectorXd mode_offset;   // mixture2 only
  double first_weight = 0.5;     // mixture2 only
  Eigen::VectorXd cov_diag;      // action_dim
  double alpha = 1.0;

  static ExpertSpec gaussian(Eigen::MatrixXd gain, Eigen::VectorXd offset, Eigen::VectorXd cov_diag, double alpha = 1.0) {
    ExpertSpec e;
    e.kind = ExpertKind::gaussian;
    e.gain = std::move(gain);
    e.offset = std::move(offset);
    e.cov_diag = std::move(cov_diag);
    e.mode_offset = Eigen::VectorXd::Zero(e.offset.size());
    e.alpha = alpha;
    e.validate();
    return e;
  }

  static ExpertSpec mixture2(Eigen::MatrixXd gain, Eigen::VectorXd offset, Eigen::VectorXd mode_offset,
                             Eigen::VectorXd cov_diag, double first_weight = 0.5, double alpha = 1.0) {
    ExpertSpec e = gaussian(std::move(gain), std::move(offset), std::move(cov_diag), alpha);
    e.kind = ExpertKind::mixture2;
    e.mode_offset = std::move(mode_offset);
    e.first_weight = first_weight;
    e.validate();
    return e;
  }

  int action_dim() const { return static_cast<int>(offset.size()); }
  int state_dim() const { return static_cast<int>(gain.cols()); }

  void validate() const {
    if (gain.rows() != offset.size() || cov_diag.size() != offset.size() || mode_offset.size() != offset.size())
      throw std::invalid_argument("ExpertSpec: inconsistent dimensions");
    if (offset.size() == 0 || gain.cols() == 0) throw std::invalid_argument("ExpertSpec: empty dimensions");
    if ((cov_diag.array() <= 0.0).any()) throw std::invalid_argument("ExpertSpec: covariance entries must be positive");
    if (!(first_weight > 0.0 && first_weight < 1.0)) throw std::invalid_argument("ExpertSpec: mixture weights must lie in (0, 1)");
    if (!(alpha > 0.0)) throw std::invalid_argument("ExpertSpec: alpha must be positive");
  }

  RealVector mean(const RealVector& s) const {
    if (s.size() != state_dim()) throw std::invalid_argument("ExpertSpec: state dimension mismatch");
    return gain * s + offset;
  }

  /// Component means (mixture2: mu +/- delta; gaussian: mu twice).
  std::array<RealVector, 2> modes(const RealVector& s) const {
    const RealVector m = mean(s);
    return {RealVector(m + mode_offset), RealVector(m - mode_offset)};
  }

  std::array<double, 2> weights() const {
    if (kind == ExpertKind::gaussian) return {1.0, 0.0};
    return {first_weight, 1.0 - first_weight};
  }
};

namespace detail {

// log N(a; m, diag(var))
inline double log_normal_diag(const RealVector& a, const RealVector& m, const Eigen::VectorXd& var) {
  const double quad = ((a - m).array().square() / var.array()).sum();
  return -0.5 * quad - 0.5 * var.array().log().sum() - 0.5 * static_cast<double>(a.size()) * std::log(2.0 * 3.14159265358979323846);
}

// Component log-weights + log densities and their max, for log-sum-exp.
inline std::array<double, 2> component_logs(const ExpertSpec& e, const RealVector& a, const RealVector& s,
                                            const Eigen::VectorXd& var) {
  const auto modes = e.modes(s);
  const auto w = e.weights();
  if (e.kind == ExpertKind::gaussian) return {log_normal_diag(a, modes[0], var), -std::numeric_limits<double>::infinity()};
  return {std::log(w[0]) + log_normal_diag(a, modes[0], var), std::log(w[1]) + log_normal_diag(a, modes[1], var)};
}

inline void check_action(const ExpertSpec& e, const RealVector& a) {
  if (a.size() != e.action_dim()) throw std::invalid_argument("ExpertSpec: action dimension mismatch");
}

}  // namespace detail

/// Score of the expert policy convolved with N(0, sigma^2 I):
/// grad_a log p_sigma(a | s).
inline RealVector analytic_score(const ExpertSpec& e, const RealVector& a, const RealVector& s, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("analytic_score: sigma must be >= 0");
  detail::check_action(e, a);
  const Eigen::VectorXd var = e.cov_diag.array() + sigma * sigma;
  const auto modes = e.modes(s);
  if (e.kind == ExpertKind::gaussian) return -((a - modes[0]).array() / var.array()).matrix();
  const auto logs = detail::component_logs(e, a, s, var);
  const double mx = std::max(logs[0], logs[1]);
  const double w0 = std::exp(logs[0] - mx), w1 = std::exp(logs[1] - mx);
  const double r0 = w0 / (w0 + w1);
  const RealVector g0 = -((a - modes[0]).array() / var.array()).matrix();
  const RealVector g1 = -((a - modes[1]).array() / var.array()).matrix();
  return r0 * g0 + (1.0 - r0) * g1;
}

/// log p_sigma(a | s), the noised expert log-density (normalized).
inline double analytic_log_density(const ExpertSpec& e, const RealVector& a, const RealVector& s, double sigma) {
  detail::check_action(e, a);
  const Eigen::VectorXd var = e.cov_diag.array() + sigma * sigma;
  const auto logs = detail::component_logs(e, a, s, var);
  if (e.kind == ExpertKind::gaussian) return logs[0];
  const double mx = std::max(logs[0], logs[1]);
  return mx + std::log(std::exp(logs[0] - mx) + std::exp(logs[1] - mx));
}

/// Soft Q-function of the expert (defined up to a state-only constant; the
/// gaussian form drops the normalizer).
inline double analytic_q(const ExpertSpec& e, const RealVector& a, const RealVector& s) {
  detail::check_action(e, a);
  if (e.kind == ExpertKind::gaussian) {
    const RealVector d = a - e.mean(s);
    return -0.5 * e.alpha * (d.array().square() / e.cov_diag.array()).sum();
  }
  return e.alpha * analytic_log_density(e, a, s, 0.0);
}

/// Draw a ~ pi_E(. | s).
inline RealVector sample_expert_action(const ExpertSpec& e, const RealVector& s, Rng& rng) {
  const auto modes = e.modes(s);
  int k = 0;
  if (e.kind == ExpertKind::mixture2) k = rng.uniform() < e.first_weight ? 0 : 1;
  RealVector a = modes[static_cast<std::size_t>(k)];
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += std::sqrt(e.cov_diag[i]) * rng.normal();
  return a;
}

/// The exact noised energy E*(a, s, t) = -log p_sigma(t)(a | s) of an expert,
/// usable anywhere a learned energy is (sampler, reward oracles).
class ExpertEnergy {
 public:
  ExpertEnergy(ExpertSpec expert, NoiseSchedule sched) : expert_(std::move(expert)), sched_(sched) {
    expert_.validate();
    sched_.validate();
  }

  int action_dim() const { return expert_.action_dim(); }
  int state_dim() const { return expert_.state_dim(); }
  double horizon() const { return sched_.horizon; }
  const ExpertSpec& expert() const { return expert_; }

  Eigen::MatrixXd energy_gradients(const Eigen::MatrixXd& actions, const Eigen::MatrixXd& states,
                                   const Eigen::MatrixXd& times) const {
    Eigen::MatrixXd g(actions.rows(), actions.cols());
    for (Eigen::Index c = 0; c < actions.cols(); ++c)
      g.col(c) = -analytic_score(expert_, actions.col(c), states.col(c), sched_.sigma(times(0, c)));
    return g;
  }

  Eigen::RowVectorXd energies(const Eigen::MatrixXd& actions, const Eigen::MatrixXd& states,
                              const Eigen::MatrixXd& times) const {
    Eigen::RowVectorXd e(actions.cols());
    for (Eigen::Index c = 0; c < actions.cols(); ++c)
      e[c] = -analytic_log_density(expert_, actions.col(c), states.col(c), sched_.sigma(times(0, c)));
    return e;
  }

 private:
  ExpertSpec expert_;
  NoiseSchedule sched_;
};

// ---------------------------------------------------------------------------
// standardization

struct Standardization {
  Eigen::VectorXd state_mean, state_std, action_mean, action_std;

  static Standardization identity(int state_dim, int action_dim) {
    return {Eigen::VectorXd::Zero(state_dim), Eigen::VectorXd::Ones(state_dim), Eigen::VectorXd::Zero(action_dim),
            Eigen::VectorXd::Ones(action_dim)};
  }

  RealVector standardize_state(const RealVector& s) const { return ((s - state_mean).array() / state_std.array()).matrix(); }
  RealVector standardize_action(const RealVector& a) const { return ((a - action_mean).array() / action_std.array()).matrix(); }
  RealVector destandardize_state(const RealVector& s) const { return (s.array() * state_std.array()).matrix() + state_mean; }
  RealVector destandardize_action(const RealVector& a) const { return (a.array() * action_std.array()).matrix() + action_mean; }

  Eigen::MatrixXd standardize_states(const Eigen::MatrixXd& s) const {
    return ((s.colwise() - state_mean).array().colwise() / state_std.array()).matrix();
  }
  Eigen::MatrixXd standardize_actions(const Eigen::MatrixXd& a) const {
    return ((a.colwise() - action_mean).array().colwise() / action_std.array()).matrix();
  }
};

/// The same expert expressed in standardized coordinates. Affine-Gaussian
/// experts are closed under per-coordinate affine maps; Q* changes only by a
/// state-independent constant.
inline ExpertSpec standardized(const ExpertSpec& e, const Standardization& st) {
  ExpertSpec out = e;
  const Eigen::VectorXd inv_a = st.action_std.cwiseInverse();
  out.gain = inv_a.asDiagonal() * e.gain * st.state_std.asDiagonal();
  out.offset = inv_a.asDiagonal() * (e.gain * st.state_mean + e.offset - st.action_mean);
  out.mode_offset = inv_a.asDiagonal() * e.mode_offset;
  out.cov_diag = e.cov_diag.array() * inv_a.array().square();
  out.validate();
  return out;
}

/// Demonstrations, one column per sample, with the statistics used to
/// standardize them (population mean / std over the set).
struct DemoDataset {
  Eigen::MatrixXd raw_states;   // state_dim x n
  Eigen::MatrixXd raw_actions;  // action_dim x n
  Eigen::MatrixXd states;       // standardized
  Eigen::MatrixXd actions;      // standardized
  Standardization stats;
  std::uint64_t seed = 0;

  Eigen::Index size() const { return raw_states.cols(); }
  int state_dim() const { return static_cast<int>(raw_states.rows()); }
  int action_dim() const { return static_cast<int>(raw_actions.rows()); }

  static DemoDataset from_raw(Eigen::MatrixXd raw_states, Eigen::MatrixXd raw_actions, std::uint64_t seed) {
    if (raw_states.cols() != raw_actions.cols()) throw std::invalid_argument("DemoDataset: state/action count mismatch");
    if (raw_states.cols() < 2) throw std::invalid_argument("DemoDataset: need at least 2 samples");
    DemoDataset d;
    d.seed = seed;
    auto stats_of = [](const Eigen::MatrixXd& m, Eigen::VectorXd& mu, Eigen::VectorXd& sd) {
      mu = m.rowwise().mean();
      sd = ((m.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(m.cols())).sqrt();
      for (Eigen::Index i = 0; i < sd.size(); ++i)
        if (!(sd[i] > 0.0)) throw std::invalid_argument("DemoDataset: constant column cannot be standardized");
    };
    stats_of(raw_states, d.stats.state_mean, d.stats.state_std);
    stats_of(raw_actions, d.stats.action_mean, d.stats.action_std);
    d.raw_states = std::move(raw_states);
    d.raw_actions = std::move(raw_actions);
    d.states = d.stats.standardize_states(d.raw_states);
    d.actions = d.stats.standardize_actions(d.raw_actions);
    return d;
  }

  /// CSV: comment header (format, seed, statistics), a column header row,
  /// then raw values printed with round-trip precision.
  void save_csv(const std::string& path, const std::string& source = "") const {
    std::ofstream os(path);
    if (!os) throw std::ios_base::failure("cannot open dataset for writing: " + path);
    auto join = [](const Eigen::VectorXd& v) {
      std::ostringstream ss;
      ss << std::setprecision(17);
      for (Eigen::Index i = 0; i < v.size(); ++i) ss << (i ? ";" : "") << v[i];
      return ss.str();
    };
    os << "# energyflow-demos v1\n";
    os << "# seed=" << seed << "\n";
    if (!source.empty()) os << "# source=" << source << "\n";
    os << "# state_mean=" << join(stats.state_mean) << "\n";
    os << "# state_std=" << join(stats.state_std) << "\n";
    os << "# action_mean=" << join(stats.action_mean) << "\n";
    os << "# action_std=" << join(stats.action_std) << "\n";
    for (int i = 0; i < state_dim(); ++i) os << "s" << i << ",";
    for (int i = 0; i < action_dim(); ++i) os << "a" << i << (i + 1 < action_dim() ? "," : "\n");
    os << std::setprecision(17);
    for (Eigen::Index c = 0; c < size(); ++c) {
      for (int i = 0; i < state_dim(); ++i) os << raw_states(i, c) << ",";
      for (int i = 0; i < action_dim(); ++i) os << raw_actions(i, c) << (i + 1 < action_dim() ? "," : "\n");
    }
    if (!os) throw std::ios_base::failure("error writing dataset: " + path);
  }

  static DemoDataset load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::ios_base::failure("cannot open dataset: " + path);
    std::string line;
    std::uint64_t seed = 0;
    int sd = 0, ad = 0;
    std::vector<std::vector<double>> rows;
    bool header_seen = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (line[0] == '#') {
        if (line.rfind("# seed=", 0) == 0) seed = std::stoull(line.substr(7));
        continue;
      }
      std::stringstream ss(line);
      std::string cell;
      if (!header_seen) {
        while (std::getline(ss, cell, ',')) (cell[0] == 's' ? sd : ad)++;
        header_seen = true;
        continue;
      }
      std::vector<double> r;
      while (std::getline(ss, cell, ',')) r.push_back(std::stod(cell));
      if (static_cast<int>(r.size()) != sd + ad) throw std::runtime_error("dataset row has wrong width: " + path);
      rows.push_back(std::move(r));
    }
    Eigen::MatrixXd s(sd, static_cast<Eigen::Index>(rows.size())), a(ad, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t c = 0; c < rows.size(); ++c) {
      for (int i = 0; i < sd; ++i) s(i, static_cast<Eigen::Index>(c)) = rows[c][static_cast<std::size_t>(i)];
      for (int i = 0; i < ad; ++i) a(i, static_cast<Eigen::Index>(c)) = rows[c][static_cast<std::size_t>(sd + i)];
    }
    return from_raw(std::move(s), std::move(a), seed);
  }
};

using StateSampler = std::function<RealVector(Rng&)>;

/// Uniform states in [lo, hi]^dim.
inline StateSampler uniform_box_sampler(int dim, double lo = -1.0, double hi = 1.0) {
  return [=](Rng& rng) {
    RealVector s(dim);
    for (int i = 0; i < dim; ++i) s[i] = rng.uniform(lo, hi);
    return s;
  };
}

/// n iid (s, a) pairs with s from `state_sampler` and a ~ pi_E(.|s).
inline DemoDataset generate_demos(const ExpertSpec& e, Eigen::Index n, const StateSampler& state_sampler, Rng& rng) {
  if (n < 2) throw std::invalid_argument("generate_demos: n must be >= 2");
  Eigen::MatrixXd s(e.state_dim(), n), a(e.action_dim(), n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const RealVector sc = state_sampler(rng);
    s.col(c) = sc;
    a.col(c) = sample_expert_action(e, sc, rng);
  }
  return DemoDataset::from_raw(std::move(s), std::move(a), rng.seed());
}

/// Reference experts over s in [-1, 1]^2: mu(s) = [[0.5, 0.2], [-0.3, 0.4]] s
/// + (0.1, -0.2). The gaussian covariance is anisotropic so that noising
/// changes the action ranking; mixture2 places two tight modes at
/// mu(s) +/- (0.6, 0.3).
inline ExpertSpec reference_expert(ExpertKind kind) {
  const Eigen::MatrixXd gain = (Eigen::MatrixXd(2, 2) << 0.5, 0.2, -0.3, 0.4).finished();
  const Eigen::VectorXd offset = (Eigen::VectorXd(2) << 0.1, -0.2).finished();
  if (kind == ExpertKind::gaussian) return ExpertSpec::gaussian(gain, offset, (Eigen::VectorXd(2) << 0.5, 0.02).finished());
  return ExpertSpec::mixture2(gain, offset, (Eigen::VectorXd(2) << 0.6, 0.3).finished(), Eigen::VectorXd::Constant(2, 0.04));
}

inline ExpertKind expert_kind_from_string(const std::string& s) {
  if (s == "gaussian") return ExpertKind::gaussian;
  if (s == "mixture2") return ExpertKind::mixture2;
  throw std::invalid_argument("unknown expert kind: " + s);
}

// ---------------------------------------------------------------------------
// goal-reaching MDP

struct GoalMdp {
  RealVector goal = RealVector::Zero(2);
  double goal_radius = 0.15;
  double step_scale = 0.1;
  double noise_std = 0.01;
  int horizon = 50;
  RealVector start_center = (RealVector(2) << -1.0, -1.0).finished();
  double start_halfwidth = 0.3;

  bool at_goal(const RealVector& s) const { return (s - goal).norm() <= goal_radius; }

  RealVector reset(Rng& rng) const {
    RealVector s = start_center;
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] += rng.uniform(-start_halfwidth, start_halfwidth);
    return s;
  }
};

struct StepResult {
  RealVector next_state;
  double reward = 0.0;
  bool done = false;
  bool clipped = false;
};

/// s' = s + step_scale * clip(a) + noise_std * xi. A state already inside
/// the goal terminates immediately with reward 1.
inline StepResult mdp_step(const GoalMdp& mdp, const RealVector& s, const RealVector& a, Rng& rng) {
  if (s.size() != 2 || a.size() != 2) throw std::invalid_argument("mdp_step: state and action must be 2-dimensional");
  StepResult r;
  if (mdp.at_goal(s)) {
    r.next_state = s;
    r.reward = 1.0;
    r.done = true;
    return r;
  }
  RealVector ac = a;
  for (Eigen::Index i = 0; i < ac.size(); ++i) {
    if (ac[i] > 1.0 || ac[i] < -1.0) {
      ac[i] = std::clamp(ac[i], -1.0, 1.0);
      r.clipped = true;
    }
  }
  r.next_state = s + mdp.step_scale * ac;
  if (mdp.noise_std > 0.0)
    for (Eigen::Index i = 0; i < 2; ++i) r.next_state[i] += mdp.noise_std * rng.normal();
  r.done = mdp.at_goal(r.next_state);
  r.reward = r.done ? 1.0 : 0.0;
  return r;
}

/// Proportional goal-seeking expert a ~ N(gain * (goal - s), jitter^2 I),
/// i.e. a gaussian Boltzmann expert with mu(s) = -gain * s + gain * goal.
inline ExpertSpec goal_expert(const GoalMdp& mdp, double gain = 0.8, double jitter = 0.1, double alpha = 1.0) {
  return ExpertSpec::gaussian(-gain * Eigen::MatrixXd::Identity(2, 2), gain * mdp.goal,
                              Eigen::VectorXd::Constant(2, jitter * jitter), alpha);
}

/// Expert rollouts on the MDP; actions are clipped to the valid box before
/// being recorded.
inline DemoDataset generate_mdp_demos(const GoalMdp& mdp, const ExpertSpec& expert, int episodes, Rng& rng) {
  std::vector<RealVector> ss, as;
  for (int ep = 0; ep < episodes; ++ep) {
    RealVector s = mdp.reset(rng);
    for (int t = 0; t < mdp.horizon; ++t) {
      RealVector a = sample_expert_action(expert, s, rng).cwiseMax(-1.0).cwiseMin(1.0);
      ss.push_back(s);
      as.push_back(a);
      const StepResult r = mdp_step(mdp, s, a, rng);
      s = r.next_state;
      if (r.done) break;
    }
  }
  Eigen::MatrixXd sm(2, static_cast<Eigen::Index>(ss.size())), am(2, static_cast<Eigen::Index>(as.size()));
  for (std::size_t i = 0; i < ss.size(); ++i) {
    sm.col(static_cast<Eigen::Index>(i)) = ss[i];
    am.col(static_cast<Eigen::Index>(i)) = as[i];
  }
  return DemoDataset::from_raw(std::move(sm), std::move(am), rng.seed());
}

}  // namespace energyflow
