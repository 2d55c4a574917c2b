#pragma once

// Soft actor-critic on the goal MDP: tanh-squashed Gaussian policy, clipped
// double-Q critics with Polyak-averaged targets, automatic temperature
// tuning toward entropy -dim(a), FIFO replay.

#include "energyflow/autodiff.hpp"
#include "energyflow/mathcore.hpp"
#include "energyflow/reward.hpp"
#include "energyflow/synth_env.hpp"
#include "energyflow/trainer.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <vector>

namespace energyflow {

struct Transition {
  RealVector s;
  RealVector a;
  double r = 0.0;
  RealVector s2;
  bool done = false;
};

/// Fixed-capacity ring; once full, each push overwrites the oldest entry.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[next_] = std::move(t);
    }
    next_ = (next_ + 1) % capacity_;
    ++pushed_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t total_pushed() const { return pushed_; }

  /// i-th oldest stored transition.
  const Transition& at(std::size_t i) const {
    if (i >= data_.size()) throw std::out_of_range("ReplayBuffer::at");
    return data_.size() < capacity_ ? data_[i] : data_[(next_ + i) % capacity_];
  }

  /// Uniform draw with replacement; returns indices into at().
  std::vector<std::size_t> sample(std::size_t batch, Rng& rng) const {
    if (data_.empty()) throw std::invalid_argument("ReplayBuffer::sample: buffer is empty");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.index(data_.size());
    return idx;
  }

 private:
  std::size_t capacity_;
  std::vector<Transition> data_;
  std::size_t next_ = 0;
  std::size_t pushed_ = 0;
};

/// A Mish MLP over one or two inputs, with its own parameter vector.
struct MlpNet {
  autodiff::Graph graph;
  int in0 = -1;
  int in1 = -1;
  std::vector<double> params;

  /// in0 [, in1] -> hidden Mish layers -> affine(out_dim). With two inputs the
  /// first layer is affine(in0) + affine(in1).
  static MlpNet build(int dim0, int dim1, const std::vector<int>& hidden, int out_dim, Rng& rng, double last_scale = 0.1) {
    if (hidden.empty()) throw std::invalid_argument("MlpNet: need at least one hidden layer");
    MlpNet n;
    auto& g = n.graph;
    n.in0 = g.input(dim0);
    int h = g.affine(n.in0, hidden[0]);
    if (dim1 > 0) {
      n.in1 = g.input(dim1);
      h = g.add(h, g.affine(n.in1, hidden[0]));
    }
    h = g.mish(h);
    for (std::size_t i = 1; i < hidden.size(); ++i) h = g.mish(g.affine(h, hidden[i]));
    g.set_output(g.affine(h, out_dim));
    n.params.assign(g.param_count(), 0.0);
    const int last = g.output();
    for (int i = 0; i < static_cast<int>(g.nodes().size()); ++i) {
      const auto& nd = g.node(i);
      if (nd.op != autodiff::Op::affine) continue;
      const double sd = (i == last ? last_scale : 1.0) / std::sqrt(static_cast<double>(nd.weight.cols));
      for (std::size_t k = 0; k < nd.weight.size(); ++k) n.params[nd.weight.offset + k] = sd * rng.normal();
    }
    return n;
  }

  autodiff::Tape forward(const autodiff::Block& x0, const autodiff::Block* x1 = nullptr) const {
    autodiff::Tape tape(graph, params, autodiff::Tape::Order::first);
    tape.set_input(in0, x0);
    if (in1 >= 0) {
      if (!x1) throw std::invalid_argument("MlpNet: second input missing");
      tape.set_input(in1, *x1);
    }
    tape.forward();
    return tape;
  }

  /// Forward with an explicit parameter vector (e.g. target network).
  autodiff::Tape forward_with(std::span<const double> p, const autodiff::Block& x0, const autodiff::Block* x1 = nullptr) const {
    autodiff::Tape tape(graph, p, autodiff::Tape::Order::first);
    tape.set_input(in0, x0);
    if (in1 >= 0) tape.set_input(in1, *x1);
    tape.forward();
    return tape;
  }
};

struct SacConfig {
  std::vector<int> hidden{64, 64};
  int batch_size = 64;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double discount = 0.99;
  double polyak = 0.005;
  double initial_alpha = 0.1;
  double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN -> -dim(a)
  double log_std_min = -20.0;
  double log_std_max = 2.0;
  std::size_t replay_capacity = 100000;
  long total_steps = 50000;
  long random_steps = 1000;
  long update_after = 1000;
  int updates_per_step = 1;
  long eval_every = 2500;
  int eval_episodes = 20;
  double action_scale = 1.0;

  void validate() const {
    if (batch_size < 1 || hidden.empty()) throw std::invalid_argument("SacConfig: bad batch size or hidden sizes");
    if (!(discount > 0.0 && discount <= 1.0) || !(polyak > 0.0 && polyak <= 1.0))
      throw std::invalid_argument("SacConfig: discount and polyak must lie in (0, 1]");
    if (!(initial_alpha > 0.0)) throw std::invalid_argument("SacConfig: initial_alpha must be positive");
    if (total_steps < 0 || eval_every <= 0 || eval_episodes <= 0) throw std::invalid_argument("SacConfig: bad step counts");
  }
};

/// y = r + discount * (1 - d) * (min(Q1', Q2') - alpha * logp)
inline double critic_target(double r, bool done, double min_target_q, double logp, double alpha, double discount) {
  return r + discount * (done ? 0.0 : 1.0) * (min_target_q - alpha * logp);
}

/// log(1 - tanh(u)^2) without cancellation.
inline double log_one_minus_tanh2(double u) {
  const double x = -2.0 * u;
  const double softplus = x > 30.0 ? x : std::log1p(std::exp(x));
  return 2.0 * (std::log(2.0) - u - softplus);
}

struct PolicySample {
  autodiff::Block actions;     // da x B, inside (-scale, scale)
  Eigen::RowVectorXd logp;
  autodiff::Block pre_tanh;    // u
  autodiff::Block noise;       // xi
  autodiff::Block std;         // exp(clamped log std)
  autodiff::Block clamp_live;  // 1 where log std was not clamped
};

struct SacLosses {
  double critic1 = 0.0;
  double critic2 = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double mean_logp = 0.0;
};

class SacAgent {
 public:
  SacAgent(int state_dim, int action_dim, SacConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), state_dim_(state_dim), action_dim_(action_dim), rng_(seed, 0x736163ULL) {
    cfg_.validate();
    Rng init(seed, 0x696e6974ULL);
    policy_ = MlpNet::build(state_dim, 0, cfg_.hidden, 2 * action_dim, init);
    critic1_ = MlpNet::build(state_dim, action_dim, cfg_.hidden, 1, init);
    critic2_ = MlpNet::build(state_dim, action_dim, cfg_.hidden, 1, init);
    target1_ = critic1_.params;
    target2_ = critic2_.params;
    log_alpha_ = std::log(cfg_.initial_alpha);
    target_entropy_ = std::isnan(cfg_.target_entropy) ? -static_cast<double>(action_dim) : cfg_.target_entropy;
    policy_opt_.emplace(policy_.params.size());
    critic1_opt_.emplace(critic1_.params.size());
    critic2_opt_.emplace(critic2_.params.size());
  }

  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  double target_entropy() const { return target_entropy_; }
  const MlpNet& policy() const { return policy_; }
  const MlpNet& critic(int i) const { return i == 0 ? critic1_ : critic2_; }
  const std::vector<double>& target_params(int i) const { return i == 0 ? target1_ : target2_; }
  MlpNet& mutable_policy() { return policy_; }
  MlpNet& mutable_critic(int i) { return i == 0 ? critic1_ : critic2_; }
  std::vector<double>& mutable_target_params(int i) { return i == 0 ? target1_ : target2_; }
  Rng& rng() { return rng_; }

  /// Reparameterized policy draw for a batch of states with the given
  /// standard-normal noise.
  PolicySample sample_policy(const autodiff::Block& states, const autodiff::Block& noise) const {
    auto tape = policy_.forward(states);
    return squash(tape.output(), noise);
  }

  /// Action for one state; deterministic uses tanh(mean).
  RealVector act(const RealVector& s, bool deterministic) {
    autodiff::Block xi = autodiff::Block::Zero(action_dim_, 1);
    if (!deterministic)
      for (int i = 0; i < action_dim_; ++i) xi(i, 0) = rng_.normal();
    return sample_policy(s, xi).actions.col(0);
  }

  /// min over the two target critics.
  Eigen::RowVectorXd min_target_q(const autodiff::Block& s, const autodiff::Block& a) const {
    auto t1 = critic1_.forward_with(target1_, s, &a);
    auto t2 = critic2_.forward_with(target2_, s, &a);
    return t1.output().row(0).cwiseMin(t2.output().row(0));
  }

  /// Critic, actor and temperature step on one batch, then Polyak averaging.
  SacLosses update(const std::vector<Transition>& batch) {
    if (batch.empty()) throw std::invalid_argument("SacAgent::update: empty batch");
    const auto n = static_cast<Eigen::Index>(batch.size());
    autodiff::Block s(state_dim_, n), a(action_dim_, n), s2(state_dim_, n);
    Eigen::RowVectorXd r(n), d(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = batch[static_cast<std::size_t>(i)];
      s.col(i) = t.s;
      a.col(i) = t.a;
      s2.col(i) = t.s2;
      r[i] = t.r;
      d[i] = t.done ? 1.0 : 0.0;
    }
    SacLosses out;
    const double alpha = this->alpha();
    out.alpha = alpha;
    const double inv_n = 1.0 / static_cast<double>(n);

    // critics
    const PolicySample next = sample_policy(s2, draw_noise(n));
    const Eigen::RowVectorXd qn = min_target_q(s2, next.actions);
    Eigen::RowVectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y[i] = critic_target(r[i], d[i] > 0.5, qn[i], next.logp[i], alpha, cfg_.discount);
    auto critic_step = [&](MlpNet& c, AdamW& opt) {
      auto tape = c.forward(s, &a);
      const Eigen::RowVectorXd diff = tape.output().row(0) - y;
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.params.size()));
      tape.backward(2.0 * inv_n * diff, grad);
      opt.step(c.params, grad, cfg_.critic_lr, 0.0);
      return diff.squaredNorm() * inv_n;
    };
    out.critic1 = critic_step(critic1_, *critic1_opt_);
    out.critic2 = critic_step(critic2_, *critic2_opt_);

    // actor
    const ActorStep st = actor_step(s, draw_noise(n));
    out.actor = st.loss;
    policy_opt_->step(policy_.params, st.grad, cfg_.actor_lr, 0.0);

    // temperature: J = -alpha * mean(logp + H_tgt), stepped in log alpha
    out.mean_logp = st.mean_logp;
    const double gap = out.mean_logp + target_entropy_;
    out.alpha_loss = -alpha * gap;
    const double g_log_alpha = -alpha * gap;
    alpha_m_ = 0.9 * alpha_m_ + 0.1 * g_log_alpha;
    alpha_v_ = 0.999 * alpha_v_ + 0.001 * g_log_alpha * g_log_alpha;
    ++alpha_t_;
    const double mh = alpha_m_ / (1.0 - std::pow(0.9, alpha_t_)), vh = alpha_v_ / (1.0 - std::pow(0.999, alpha_t_));
    log_alpha_ -= cfg_.alpha_lr * mh / (std::sqrt(vh) + 1e-8);

    polyak_update();
    return out;
  }

  struct ActorStep {
    Eigen::VectorXd grad;
    double loss = 0.0;
    double mean_logp = 0.0;
  };

  /// Actor loss mean(alpha * logp - min(Q1, Q2)) at fixed noise and its
  /// reparameterized gradient in the policy parameters.
  ActorStep actor_step(const autodiff::Block& s, const autodiff::Block& xi) const {
    const Eigen::Index n = s.cols();
    const double alpha = this->alpha(), inv_n = 1.0 / static_cast<double>(n);
    auto ptape = policy_.forward(s);
    const PolicySample cur = squash(ptape.output(), xi);
    auto q1 = critic1_.forward(s, &cur.actions);
    auto q2 = critic2_.forward(s, &cur.actions);
    const autodiff::Block dq1 = q1.input_gradient(critic1_.in1);
    const autodiff::Block dq2 = q2.input_gradient(critic2_.in1);
    autodiff::Block out_adj(2 * action_dim_, n);
    ActorStep r;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool first = q1.output()(0, i) <= q2.output()(0, i);
      const double qmin = first ? q1.output()(0, i) : q2.output()(0, i);
      r.loss += alpha * cur.logp[i] - qmin;
      for (int k = 0; k < action_dim_; ++k) {
        const double th = std::tanh(cur.pre_tanh(k, i));
        const double dq_da = first ? dq1(k, i) : dq2(k, i);
        const double da_du = cfg_.action_scale * (1.0 - th * th);
        const double sx = cur.std(k, i) * cur.noise(k, i);
        // d(logp)/du = 2 tanh(u); du/dmu = 1, du/dlogstd = std * xi
        const double dl_du = alpha * 2.0 * th - dq_da * da_du;
        out_adj(k, i) = inv_n * dl_du;
        out_adj(action_dim_ + k, i) = inv_n * cur.clamp_live(k, i) * (dl_du * sx - alpha);
      }
    }
    r.loss *= inv_n;
    r.mean_logp = cur.logp.mean();
    r.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(policy_.params.size()));
    ptape.backward(out_adj, r.grad);
    return r;
  }

  void polyak_update() {
    const double tau = cfg_.polyak;
    for (std::size_t i = 0; i < target1_.size(); ++i) target1_[i] = tau * critic1_.params[i] + (1.0 - tau) * target1_[i];
    for (std::size_t i = 0; i < target2_.size(); ++i) target2_[i] = tau * critic2_.params[i] + (1.0 - tau) * target2_[i];
  }

 private:
  autodiff::Block draw_noise(Eigen::Index n) {
    autodiff::Block xi(action_dim_, n);
    for (Eigen::Index i = 0; i < xi.size(); ++i) xi.data()[i] = rng_.normal();
    return xi;
  }

  PolicySample squash(const autodiff::Block& out, const autodiff::Block& noise) const {
    const Eigen::Index n = out.cols();
    const int da = action_dim_;
    PolicySample p;
    p.noise = noise;
    p.actions.resize(da, n);
    p.pre_tanh.resize(da, n);
    p.std.resize(da, n);
    p.clamp_live.resize(da, n);
    p.logp.resize(n);
    const double log_scale = std::log(cfg_.action_scale);
    for (Eigen::Index i = 0; i < n; ++i) {
      double lp = 0.0;
      for (int k = 0; k < da; ++k) {
        const double raw_ls = out(da + k, i);
        const double ls = std::clamp(raw_ls, cfg_.log_std_min, cfg_.log_std_max);
        p.clamp_live(k, i) = (raw_ls > cfg_.log_std_min && raw_ls < cfg_.log_std_max) ? 1.0 : 0.0;
        const double sd = std::exp(ls);
        const double u = out(k, i) + sd * noise(k, i);
        p.std(k, i) = sd;
        p.pre_tanh(k, i) = u;
        p.actions(k, i) = cfg_.action_scale * std::tanh(u);
        lp += -0.5 * noise(k, i) * noise(k, i) - ls - 0.5 * std::log(2.0 * 3.14159265358979323846) - log_scale -
              log_one_minus_tanh2(u);
      }
      p.logp[i] = lp;
    }
    return p;
  }

  SacConfig cfg_;
  int state_dim_, action_dim_;
  Rng rng_;
  MlpNet policy_, critic1_, critic2_;
  std::vector<double> target1_, target2_;
  double log_alpha_ = 0.0;
  double target_entropy_ = 0.0;
  double alpha_m_ = 0.0, alpha_v_ = 0.0;
  long alpha_t_ = 0;
  std::optional<AdamW> policy_opt_, critic1_opt_, critic2_opt_;
};

// ---------------------------------------------------------------------------
// reward arms and learning curves

/// Reward of one transition given (s, a) and the environment outcome.
using TransitionReward = std::function<double(const RealVector& s, const RealVector& a, const StepResult& outcome)>;

/// Builds the reward for `mode`. Energy arms evaluate `energy` on
/// standardized (s, a) using `stats`.
template <EnergyField F>
TransitionReward make_transition_reward(RewardMode mode, const GoalMdp& mdp, const EnergyReward<F>* energy,
                                        const Standardization* stats) {
  const bool needs_energy = mode == RewardMode::raw || mode == RewardMode::centered || mode == RewardMode::centered_plus_sparse;
  if (needs_energy && (!energy || !stats)) throw std::invalid_argument("energy reward arm requires an energy and statistics");
  switch (mode) {
    case RewardMode::sparse:
      return [](const RealVector&, const RealVector&, const StepResult& o) { return o.reward; };
    case RewardMode::oracle_dense:
      return [mdp](const RealVector&, const RealVector&, const StepResult& o) {
        return o.done ? o.reward : -(o.next_state - mdp.goal).norm();
      };
    case RewardMode::raw:
      return [energy, stats](const RealVector& s, const RealVector& a, const StepResult&) {
        return energy->raw(stats->standardize_action(a), stats->standardize_state(s));
      };
    case RewardMode::centered:
      return [energy, stats](const RealVector& s, const RealVector& a, const StepResult&) {
        return energy->centered(stats->standardize_action(a), stats->standardize_state(s));
      };
    case RewardMode::centered_plus_sparse:
      return [energy, stats](const RealVector& s, const RealVector& a, const StepResult& o) {
        return energy->config().energy_scale * energy->centered(stats->standardize_action(a), stats->standardize_state(s)) +
               o.reward;
      };
  }
  throw std::invalid_argument("unknown reward mode");
}

struct CurvePoint {
  long step = 0;
  double success_rate = 0.0;
  double mean_return = 0.0;
};

struct LearningCurve {
  std::uint64_t seed = 0;
  std::vector<CurvePoint> points;

  /// First evaluated step with success >= threshold; -1 if never.
  long steps_to(double threshold) const {
    for (const auto& p : points)
      if (p.success_rate >= threshold) return p.step;
    return -1;
  }
  double final_success() const { return points.empty() ? 0.0 : points.back().success_rate; }
};

/// Deterministic-policy evaluation episodes: success rate and mean return
/// under `reward`.
inline CurvePoint evaluate_policy(SacAgent& agent, const GoalMdp& mdp, const TransitionReward& reward, int episodes, Rng& rng) {
  CurvePoint p;
  int successes = 0;
  double total = 0.0;
  for (int ep = 0; ep < episodes; ++ep) {
    RealVector s = mdp.reset(rng);
    for (int t = 0; t < mdp.horizon; ++t) {
      const RealVector a = agent.act(s, true);
      const StepResult o = mdp_step(mdp, s, a, rng);
      total += reward(s, a, o);
      s = o.next_state;
      if (o.done) {
        ++successes;
        break;
      }
    }
  }
  p.success_rate = static_cast<double>(successes) / episodes;
  p.mean_return = total / episodes;
  return p;
}

/// One SAC run on `mdp` with the given per-transition reward.
inline LearningCurve run_sac(const GoalMdp& mdp, const TransitionReward& reward, const SacConfig& cfg, std::uint64_t seed) {
  SacAgent agent(2, 2, cfg, seed);
  ReplayBuffer buffer(cfg.replay_capacity);
  Rng env_rng(seed, 0x656e76ULL);
  Rng eval_rng(seed, 0x6576616cULL);
  LearningCurve curve;
  curve.seed = seed;
  RealVector s = mdp.reset(env_rng);
  int t_in_episode = 0;
  std::vector<Transition> batch(static_cast<std::size_t>(cfg.batch_size));
  for (long step = 1; step <= cfg.total_steps; ++step) {
    RealVector a(2);
    if (step <= cfg.random_steps) {
      for (int i = 0; i < 2; ++i) a[i] = env_rng.uniform(-cfg.action_scale, cfg.action_scale);
    } else {
      a = agent.act(s, false);
    }
    const StepResult o = mdp_step(mdp, s, a, env_rng);
    const double r = reward(s, a, o);
    if (!std::isfinite(r)) throw rl_divergence("non-finite reward", step);
    buffer.push({s, a, r, o.next_state, o.done});
    s = o.next_state;
    ++t_in_episode;
    if (o.done || t_in_episode >= mdp.horizon) {
      s = mdp.reset(env_rng);
      t_in_episode = 0;
    }
    if (step > cfg.update_after) {
      for (int u = 0; u < cfg.updates_per_step; ++u) {
        const auto idx = buffer.sample(static_cast<std::size_t>(cfg.batch_size), agent.rng());
        for (std::size_t i = 0; i < idx.size(); ++i) batch[i] = buffer.at(idx[i]);
        const SacLosses l = agent.update(batch);
        if (!std::isfinite(l.critic1) || !std::isfinite(l.critic2) || !std::isfinite(l.actor) || !std::isfinite(l.alpha))
          throw rl_divergence("non-finite SAC loss", step);
      }
    }
    if (step % cfg.eval_every == 0) {
      CurvePoint p = evaluate_policy(agent, mdp, reward, cfg.eval_episodes, eval_rng);
      p.step = step;
      curve.points.push_back(p);
    }
  }
  return curve;
}

inline void write_curves_csv(const std::string& path, const std::vector<std::pair<std::string, LearningCurve>>& curves) {
  std::ofstream os(path);
  if (!os) throw std::ios_base::failure("cannot open curve file: " + path);
  os << "arm,seed,step,success_rate,mean_return\n" << std::setprecision(17);
  for (const auto& [arm, c] : curves)
    for (const auto& p : c.points) os << arm << "," << c.seed << "," << p.step << "," << p.success_rate << "," << p.mean_return << "\n";
  if (!os) throw std::ios_base::failure("error writing curve file: " + path);
}

}  // namespace energyflow
