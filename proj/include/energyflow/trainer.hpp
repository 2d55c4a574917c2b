#pragma once

// Denoising score matching through the energy gradient, plus the optimizer
// stack used to fit it (AdamW, linear warmup then cosine decay, global-norm
// clipping, head projection after every step).

#include "energyflow/autodiff.hpp"
#include "energyflow/energy_model.hpp"
#include "energyflow/mathcore.hpp"
#include "energyflow/schedule.hpp"
#include "energyflow/synth_env.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <thread>
#include <vector>

namespace energyflow {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;
  int batch_size = 128;
  long warmup_steps = 500;
  long total_steps = 20000;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // divergence detector: moving average over `divergence_window` losses
  // above `divergence_factor` x the first full window, for
  // `divergence_patience` consecutive steps
  int divergence_window = 100;
  double divergence_factor = 10.0;
  long divergence_patience = 500;
  long checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const {
    if (!(learning_rate > 0.0) || weight_decay < 0.0) throw std::invalid_argument("TrainConfig: bad learning rate or weight decay");
    if (batch_size <= 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
    if (total_steps < 0 || warmup_steps < 0) throw std::invalid_argument("TrainConfig: step counts must be >= 0");
    if (warmup_steps > total_steps && total_steps > 0) throw std::invalid_argument("TrainConfig: warmup_steps exceeds total_steps");
    if (!(grad_clip_norm > 0.0)) throw std::invalid_argument("TrainConfig: grad_clip_norm must be positive");
    if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
  }
};

/// Learning rate at 1-based `step`: linear warmup lr*step/warmup, then
/// lr * (1 + cos(pi * progress)) / 2.
inline double learning_rate_at(const TrainConfig& cfg, long step) {
  if (step < cfg.warmup_steps) return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const long span = cfg.total_steps - cfg.warmup_steps;
  const double progress = span <= 0 ? 1.0 : std::clamp(static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(span), 0.0, 1.0);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

/// Scales `grad` to global norm <= max_norm; returns the norm before clipping.
inline double clip_global_norm(Eigen::Ref<Eigen::VectorXd> grad, double max_norm) {
  const double n = grad.norm();
  if (n > max_norm) grad *= max_norm / n;
  return n;
}

/// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))), v_(m_), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> params, const Eigen::VectorXd& grad, double lr, double weight_decay) {
    if (grad.size() != m_.size() || static_cast<Eigen::Index>(params.size()) != m_.size())
      throw std::invalid_argument("AdamW: size mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    for (Eigen::Index i = 0; i < m_.size(); ++i) {
      double& p = params[static_cast<std::size_t>(i)];
      p -= lr * ((m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_) + weight_decay * p);
    }
  }

  long steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct DsmResult {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Runs `fn(begin, end, chunk_index)` over fixed-size chunks of [0, n) on up
/// to `threads` workers. Chunk boundaries do not depend on `threads`, so
/// per-chunk results reduced in chunk order are identical for any thread
/// count.
template <typename Fn>
void for_each_chunk(Eigen::Index n, Eigen::Index chunk, int threads, Fn&& fn) {
  const Eigen::Index chunks = (n + chunk - 1) / chunk;
  auto run = [&](Eigen::Index c) { fn(c * chunk, std::min(n, (c + 1) * chunk), c); };
  if (threads <= 1 || chunks <= 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) run(c);
    return;
  }
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<Eigen::Index>(threads, chunks));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Eigen::Index c = w; c < chunks; c += workers) run(c);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline constexpr Eigen::Index kDsmChunk = 64;

/// Weighted DSM loss with explicit diffusion times (1 x B) and noise
/// (action_dim x B):
///   mean_b sigma_b^2 || S(a0_b + sigma_b eps_b) + eps_b / sigma_b ||^2
/// together with its parameter gradient.
inline DsmResult dsm_loss(const EnergyNet& net, const NoiseSchedule& sched, const autodiff::Block& states,
                          const autodiff::Block& actions, const autodiff::Block& times, const autodiff::Block& noise,
                          int threads = 1) {
  const Eigen::Index batch = actions.cols();
  if (batch == 0) throw std::invalid_argument("dsm_loss: empty batch");
  if (states.cols() != batch || times.cols() != batch || noise.cols() != batch || noise.rows() != actions.rows())
    throw std::invalid_argument("dsm_loss: batch shape mismatch");
  const Eigen::Index chunks = (batch + kDsmChunk - 1) / kDsmChunk;
  std::vector<double> chunk_loss(static_cast<std::size_t>(chunks), 0.0);
  std::vector<Eigen::VectorXd> chunk_grad(static_cast<std::size_t>(chunks));
  const double inv_b = 1.0 / static_cast<double>(batch);

  for_each_chunk(batch, kDsmChunk, threads, [&](Eigen::Index lo, Eigen::Index hi, Eigen::Index c) {
    const Eigen::Index m = hi - lo;
    Eigen::RowVectorXd sig(m);
    for (Eigen::Index j = 0; j < m; ++j) sig[j] = sched.sigma(times(0, lo + j));
    const autodiff::Block eps = noise.middleCols(lo, m);
    autodiff::Block noisy = actions.middleCols(lo, m) + (eps.array().rowwise() * sig.array()).matrix();
    auto tape = net.tape(autodiff::Tape::Order::second);
    net.bind(tape, std::move(noisy), states.middleCols(lo, m), times.middleCols(lo, m));
    tape.forward();
    const autodiff::Block g = tape.input_gradient(net.action_node());
    // residual r = eps - sigma * grad_a E, loss_b = ||r||^2
    const autodiff::Block r = eps - (g.array().rowwise() * sig.array()).matrix();
    chunk_loss[static_cast<std::size_t>(c)] = r.squaredNorm() * inv_b;
    const autodiff::Block dir = (-2.0 * inv_b) * (r.array().rowwise() * sig.array()).matrix();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.param_count()));
    tape.mixed_param_gradient(net.action_node(), dir, grad);
    chunk_grad[static_cast<std::size_t>(c)] = std::move(grad);
  });

  DsmResult out;
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.param_count()));
  for (Eigen::Index c = 0; c < chunks; ++c) {
    out.loss += chunk_loss[static_cast<std::size_t>(c)];
    out.grad += chunk_grad[static_cast<std::size_t>(c)];
  }
  return out;
}

/// DSM loss with t ~ U[0, T] and eps ~ N(0, I) drawn per sample from `rng`.
inline DsmResult dsm_loss(const EnergyNet& net, const NoiseSchedule& sched, const autodiff::Block& states,
                          const autodiff::Block& actions, Rng& rng, int threads = 1) {
  const Eigen::Index batch = actions.cols();
  if (batch == 0) throw std::invalid_argument("dsm_loss: empty batch");
  autodiff::Block times(1, batch), noise(actions.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    times(0, b) = rng.uniform(0.0, sched.horizon);
    for (Eigen::Index i = 0; i < noise.rows(); ++i) noise(i, b) = rng.normal();
  }
  return dsm_loss(net, sched, states, actions, times, noise, threads);
}

struct TrainReport {
  std::vector<double> loss;
  std::vector<double> lr;
  std::vector<double> grad_norm;
  double final_loss_average = 0.0;

  void write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::ios_base::failure("cannot open report for writing: " + path);
    os << "step,loss,lr,grad_norm\n" << std::setprecision(17);
    for (std::size_t i = 0; i < loss.size(); ++i) os << i + 1 << "," << loss[i] << "," << lr[i] << "," << grad_norm[i] << "\n";
    if (!os) throw std::ios_base::failure("error writing report: " + path);
  }
};

using TrainCallback = std::function<void(long step, const EnergyNet& net)>;

/// Fits `net` to the standardized demonstrations in `data`.
inline TrainReport train(EnergyNet& net, const NoiseSchedule& sched, const DemoDataset& data, const TrainConfig& cfg,
                         const TrainCallback& on_step = {}) {
  cfg.validate();
  sched.validate();
  if (data.action_dim() != net.action_dim() || data.state_dim() != net.state_dim())
    throw std::invalid_argument("train: dataset dimensions do not match the network");
  if (std::abs(sched.horizon - net.horizon()) > 0.0) throw std::invalid_argument("train: schedule horizon differs from the network's");
  TrainReport report;
  if (cfg.total_steps == 0) return report;
  report.loss.reserve(static_cast<std::size_t>(cfg.total_steps));
  report.lr.reserve(static_cast<std::size_t>(cfg.total_steps));
  report.grad_norm.reserve(static_cast<std::size_t>(cfg.total_steps));

  Rng rng(cfg.seed, 0x7261696eULL);
  AdamW opt(net.param_count(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  const int b = cfg.batch_size;
  autodiff::Block states(data.state_dim(), b), actions(data.action_dim(), b);

  std::deque<double> window;
  double window_sum = 0.0, initial = -1.0;
  long over = 0;

  for (long step = 1; step <= cfg.total_steps; ++step) {
    for (int j = 0; j < b; ++j) {
      const auto idx = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.size())));
      states.col(j) = data.states.col(idx);
      actions.col(j) = data.actions.col(idx);
    }
    DsmResult r = dsm_loss(net, sched, states, actions, rng, cfg.threads);
    if (!std::isfinite(r.loss) || !r.grad.allFinite()) throw training_divergence("non-finite DSM loss", step);
    const double gn = clip_global_norm(r.grad, cfg.grad_clip_norm);
    const double lr = learning_rate_at(cfg, step);
    opt.step(net.mutable_params(), r.grad, lr, cfg.weight_decay);
    net.renormalize_head();

    report.loss.push_back(r.loss);
    report.lr.push_back(lr);
    report.grad_norm.push_back(gn);

    window.push_back(r.loss);
    window_sum += r.loss;
    if (static_cast<int>(window.size()) > cfg.divergence_window) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (static_cast<int>(window.size()) == cfg.divergence_window) {
      const double avg = window_sum / cfg.divergence_window;
      if (initial < 0.0) initial = avg;
      over = avg > cfg.divergence_factor * initial ? over + 1 : 0;
      if (over >= cfg.divergence_patience) throw training_divergence("moving-average DSM loss diverged", step);
    }

    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() && step % cfg.checkpoint_every == 0) net.save(cfg.checkpoint_path);
    if (on_step) on_step(step, net);
  }
  const std::size_t tail = std::min<std::size_t>(report.loss.size(), static_cast<std::size_t>(cfg.divergence_window));
  report.final_loss_average = std::accumulate(report.loss.end() - static_cast<std::ptrdiff_t>(tail), report.loss.end(), 0.0) /
                              static_cast<double>(tail);
  return report;
}

}  // namespace energyflow
