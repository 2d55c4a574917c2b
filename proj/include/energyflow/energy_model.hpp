#pragma once

// Scalar energy E(a, s, t) over actions, conditioned on state and diffusion
// time. The denoising field is S = -grad_a E, so it is curl-free by
// construction.
//
// Layout of the standard network:
//   time      : sinusoidal embedding (2 x time_frequencies)
//   condition : 2-layer Mish MLP over [state, time embedding]
//   trunk     : Mish input layer, then residual blocks h += mish(FiLM(W h))
//               with per-block scale/shift read off the condition vector
//   head      : 2 affine maps (hidden -> head_hidden -> 1) constrained to
//               spectral norm <= 1
//   output    : optionally multiplied by c(t) = 1 / (1 + sigma(t)^2), the
//               inverse marginal variance of unit-variance data noised to t,
//               so the head sees an O(1) target gradient at every t

#include "energyflow/autodiff.hpp"
#include "energyflow/mathcore.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace energyflow {

struct EnergyNetConfig {
  int action_dim = 2;
  int state_dim = 2;
  int time_frequencies = 8;
  double time_freq_min = 1.0;
  double time_freq_max = 50.0;
  int cond_hidden = 64;
  int trunk_hidden = 128;
  int trunk_blocks = 2;
  int head_hidden = 64;
  double horizon = 1.0;
  double head_init_scale = 0.1;
  bool output_scaling = true;
  double scale_sigma_min = 0.01;
  double scale_sigma_max = 10.0;

  void validate() const {
    if (action_dim <= 0 || state_dim <= 0) throw std::invalid_argument("EnergyNetConfig: dims must be positive");
    if (time_frequencies <= 0 || cond_hidden <= 0 || trunk_hidden <= 0 || head_hidden <= 0 || trunk_blocks < 0)
      throw std::invalid_argument("EnergyNetConfig: hidden widths must be positive");
    if (!(horizon > 0.0)) throw std::invalid_argument("EnergyNetConfig: horizon must be positive");
    if (!(time_freq_min > 0.0 && time_freq_min <= time_freq_max))
      throw std::invalid_argument("EnergyNetConfig: need 0 < time_freq_min <= time_freq_max");
    if (output_scaling && !(scale_sigma_min > 0.0 && scale_sigma_min < scale_sigma_max))
      throw std::invalid_argument("EnergyNetConfig: need 0 < scale_sigma_min < scale_sigma_max");
  }

  /// Output multiplier at time t (1 when output scaling is off).
  double output_scale(double t) const {
    if (!output_scaling) return 1.0;
    const double u = t / horizon;
    const double sig = std::pow(scale_sigma_min, 1.0 - u) * std::pow(scale_sigma_max, u);
    return 1.0 / (1.0 + sig * sig);
  }

  /// FNV-1a over the architecture fields; stored in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFFu;
        h *= 1099511628211ULL;
      }
    };
    for (int v : {action_dim, state_dim, time_frequencies, cond_hidden, trunk_hidden, trunk_blocks, head_hidden})
      mix(static_cast<std::uint64_t>(v));
    mix(std::bit_cast<std::uint64_t>(horizon));
    mix(std::bit_cast<std::uint64_t>(time_freq_min));
    mix(std::bit_cast<std::uint64_t>(time_freq_max));
    mix(output_scaling ? 1u : 0u);
    mix(std::bit_cast<std::uint64_t>(scale_sigma_min));
    mix(std::bit_cast<std::uint64_t>(scale_sigma_max));
    return h;
  }
};

/// Angular frequencies of the time embedding, geometric over [lo, hi].
inline std::vector<double> time_frequencies(int count, double lo = 1.0, double hi = 50.0) {
  std::vector<double> f(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double u = count == 1 ? 0.0 : static_cast<double>(i) / (count - 1);
    f[static_cast<std::size_t>(i)] = lo * std::exp(u * std::log(hi / lo));
  }
  return f;
}

struct EnergyEval {
  double energy = 0.0;
  RealVector score;
};

class EnergyNet {
 public:
  /// Fan-in scaled Gaussian initialization; the last head map starts at
  /// `head_init_scale` of that scale.
  static EnergyNet init(Rng& rng, const EnergyNetConfig& cfg) {
    cfg.validate();
    EnergyNet net(cfg);
    net.params_.assign(net.graph_.param_count(), 0.0);
    const auto& nodes = net.graph_.nodes();
    int last = -1;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
      if (nodes[static_cast<std::size_t>(i)].op == autodiff::Op::spectral_affine) last = i;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      if (n.op != autodiff::Op::affine && n.op != autodiff::Op::spectral_affine) continue;
      const double sd = (i == last ? cfg.head_init_scale : 1.0) / std::sqrt(static_cast<double>(n.weight.cols));
      for (std::size_t k = 0; k < n.weight.size(); ++k) net.params_[n.weight.offset + k] = sd * rng.normal();
    }
    net.renormalize_head();
    return net;
  }

  /// Standard architecture with explicit parameters (e.g. from a checkpoint).
  EnergyNet(const EnergyNetConfig& cfg, std::vector<double> params) : EnergyNet(cfg) {
    if (params.size() != graph_.param_count())
      throw std::invalid_argument("EnergyNet: parameter count does not match architecture");
    params_ = std::move(params);
  }

  /// Arbitrary scalar-output graph with designated action/state/time inputs.
  EnergyNet(autodiff::Graph graph, int action_node, int state_node, int time_node, std::vector<double> params,
            double horizon = 1.0)
      : graph_(std::move(graph)), action_node_(action_node), state_node_(state_node), time_node_(time_node),
        params_(std::move(params)) {
    if (params_.size() != graph_.param_count())
      throw std::invalid_argument("EnergyNet: parameter count does not match graph");
    if (graph_.node(graph_.output()).dim != 1) throw contract_violation("EnergyNet: graph output is not scalar");
    cfg_.action_dim = graph_.node(action_node).dim;
    cfg_.state_dim = graph_.node(state_node).dim;
    cfg_.horizon = horizon;
    standard_ = false;
  }

  const EnergyNetConfig& config() const { return cfg_; }
  bool is_standard() const { return standard_; }
  int action_dim() const { return cfg_.action_dim; }
  int state_dim() const { return cfg_.state_dim; }
  double horizon() const { return cfg_.horizon; }
  const autodiff::Graph& graph() const { return graph_; }
  int action_node() const { return action_node_; }
  int state_node() const { return state_node_; }
  int time_node() const { return time_node_; }

  std::span<const double> params() const { return params_; }
  std::vector<double>& mutable_params() { return params_; }
  std::size_t param_count() const { return params_.size(); }

  /// Loads a batch into a tape: actions (action_dim x B), states
  /// (state_dim x B), times (1 x B).
  void bind(autodiff::Tape& tape, autodiff::Block actions, autodiff::Block states, autodiff::Block times) const {
    if (actions.rows() != cfg_.action_dim) throw std::invalid_argument("EnergyNet: action dimension mismatch");
    if (states.rows() != cfg_.state_dim) throw std::invalid_argument("EnergyNet: state dimension mismatch");
    if (times.rows() != 1 || times.cols() != actions.cols() || states.cols() != actions.cols())
      throw std::invalid_argument("EnergyNet: batch size mismatch");
    for (Eigen::Index c = 0; c < times.cols(); ++c) {
      const double t = times(0, c);
      if (!(t >= 0.0 && t <= cfg_.horizon)) throw std::invalid_argument("EnergyNet: t outside [0, T]");
    }
    tape.set_input(action_node_, std::move(actions));
    tape.set_input(state_node_, std::move(states));
    if (scale_node_ >= 0) {
      autodiff::Block sc(1, times.cols());
      for (Eigen::Index c = 0; c < times.cols(); ++c) sc(0, c) = cfg_.output_scale(times(0, c)) - 1.0;
      tape.set_input(scale_node_, std::move(sc));
      tape.set_input(zero_node_, autodiff::Block::Zero(1, times.cols()));
    }
    tape.set_input(time_node_, std::move(times));
  }

  autodiff::Tape tape(autodiff::Tape::Order order = autodiff::Tape::Order::first) const {
    return autodiff::Tape(graph_, params_, order);
  }

  double energy(const RealVector& a, const RealVector& s, double t) const {
    auto tp = tape();
    bind(tp, a, s, autodiff::Block::Constant(1, 1, t));
    tp.forward();
    return tp.output()(0, 0);
  }

  RealVector score(const RealVector& a, const RealVector& s, double t) const { return evaluate(a, s, t).score; }

  EnergyEval evaluate(const RealVector& a, const RealVector& s, double t) const {
    auto tp = tape();
    bind(tp, a, s, autodiff::Block::Constant(1, 1, t));
    tp.forward();
    EnergyEval ev;
    ev.energy = tp.output()(0, 0);
    ev.score = -tp.input_gradient(action_node_).col(0);
    return ev;
  }

  /// dS_i/da_j = -d^2E/(da_i da_j).
  RealMatrix score_jacobian(const RealVector& a, const RealVector& s, double t) const {
    auto tp = tape(autodiff::Tape::Order::second);
    bind(tp, a, s, autodiff::Block::Constant(1, 1, t));
    tp.forward();
    tp.input_gradient(action_node_);
    const int d = cfg_.action_dim;
    RealMatrix jac(d, d);
    for (int j = 0; j < d; ++j) {
      autodiff::Block e = autodiff::Block::Zero(d, 1);
      e(j, 0) = 1.0;
      jac.col(j) = -tp.hessian_vector(action_node_, e).col(0);
    }
    return jac;
  }

  /// Energies for a batch (one per column).
  Eigen::RowVectorXd energies(const autodiff::Block& actions, const autodiff::Block& states,
                              const autodiff::Block& times) const {
    auto tp = tape();
    bind(tp, actions, states, times);
    tp.forward();
    return tp.output().row(0);
  }

  /// Scores for a batch; optionally also the energies.
  autodiff::Block scores(const autodiff::Block& actions, const autodiff::Block& states, const autodiff::Block& times,
                         Eigen::RowVectorXd* energies_out = nullptr) const {
    auto tp = tape();
    bind(tp, actions, states, times);
    tp.forward();
    if (energies_out) *energies_out = tp.output().row(0);
    return -tp.input_gradient(action_node_);
  }

  /// grad_a E for a batch (the negated scores).
  autodiff::Block energy_gradients(const autodiff::Block& actions, const autodiff::Block& states,
                                   const autodiff::Block& times) const {
    auto tp = tape();
    bind(tp, actions, states, times);
    tp.forward();
    return tp.input_gradient(action_node_);
  }

  /// Nodes whose weights carry the spectral constraint.
  std::vector<int> spectral_nodes() const { return graph_.nodes_of(autodiff::Op::spectral_affine); }

  /// Projects every spectral-constrained weight onto {||W||_2 <= 1}. The
  /// norm comes from the eigenvalues of the smaller Gram matrix, so the
  /// projection never undershoots.
  void renormalize_head() {
    for (int node : spectral_nodes()) {
      const auto& n = graph_.node(node);
      Eigen::Map<Eigen::MatrixXd> w(params_.data() + n.weight.offset, n.weight.rows, n.weight.cols);
      const double sigma = exact_spectral_norm(w);
      if (sigma > 1.0) w /= sigma;
    }
  }

  static double exact_spectral_norm(const Eigen::Ref<const Eigen::MatrixXd>& w) {
    const Eigen::MatrixXd gram = w.rows() <= w.cols() ? Eigen::MatrixXd(w * w.transpose()) : Eigen::MatrixXd(w.transpose() * w);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
  }

  /// Spectral norm of each constrained map by `iterations` of power
  /// iteration from a fixed random start.
  std::vector<double> head_spectral_norms(int iterations = 20) const {
    std::vector<double> out;
    Rng rng(0x5eed);
    for (int node : spectral_nodes()) {
      const auto& n = graph_.node(node);
      Eigen::Map<const Eigen::MatrixXd> w(params_.data() + n.weight.offset, n.weight.rows, n.weight.cols);
      out.push_back(spectral_norm_estimate(w, iterations, rng));
    }
    return out;
  }

  /// Writes the checkpoint: magic, version, architecture, config hash, then
  /// every parameter as a little-endian IEEE double in graph order.
  void save(const std::string& path) const {
    if (!standard_) throw contract_violation("EnergyNet::save: only the standard architecture is serializable");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::ios_base::failure("cannot open checkpoint for writing: " + path);
    os.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    put_u32(os, kVersion);
    for (int v : {cfg_.action_dim, cfg_.state_dim, cfg_.time_frequencies, cfg_.cond_hidden, cfg_.trunk_hidden,
                  cfg_.trunk_blocks, cfg_.head_hidden})
      put_u32(os, static_cast<std::uint32_t>(v));
    put_u64(os, std::bit_cast<std::uint64_t>(cfg_.horizon));
    put_u64(os, std::bit_cast<std::uint64_t>(cfg_.time_freq_min));
    put_u64(os, std::bit_cast<std::uint64_t>(cfg_.time_freq_max));
    put_u32(os, cfg_.output_scaling ? 1u : 0u);
    put_u64(os, std::bit_cast<std::uint64_t>(cfg_.scale_sigma_min));
    put_u64(os, std::bit_cast<std::uint64_t>(cfg_.scale_sigma_max));
    put_u64(os, cfg_.hash());
    put_u64(os, params_.size());
    for (double p : params_) put_u64(os, std::bit_cast<std::uint64_t>(p));
    if (!os) throw std::ios_base::failure("error writing checkpoint: " + path);
  }

  static EnergyNet load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::ios_base::failure("cannot open checkpoint: " + path);
    std::array<char, 8> magic{};
    is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (!is || magic != kMagic) throw std::runtime_error("not an energy checkpoint: " + path);
    if (get_u32(is) != kVersion) throw std::runtime_error("unsupported checkpoint version: " + path);
    EnergyNetConfig cfg;
    cfg.action_dim = static_cast<int>(get_u32(is));
    cfg.state_dim = static_cast<int>(get_u32(is));
    cfg.time_frequencies = static_cast<int>(get_u32(is));
    cfg.cond_hidden = static_cast<int>(get_u32(is));
    cfg.trunk_hidden = static_cast<int>(get_u32(is));
    cfg.trunk_blocks = static_cast<int>(get_u32(is));
    cfg.head_hidden = static_cast<int>(get_u32(is));
    cfg.horizon = std::bit_cast<double>(get_u64(is));
    cfg.time_freq_min = std::bit_cast<double>(get_u64(is));
    cfg.time_freq_max = std::bit_cast<double>(get_u64(is));
    cfg.output_scaling = get_u32(is) != 0;
    cfg.scale_sigma_min = std::bit_cast<double>(get_u64(is));
    cfg.scale_sigma_max = std::bit_cast<double>(get_u64(is));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    cfg.validate();
    if (get_u64(is) != cfg.hash()) throw std::runtime_error("checkpoint config hash mismatch: " + path);
    const std::uint64_t count = get_u64(is);
    std::vector<double> params(count);
    for (auto& p : params) p = std::bit_cast<double>(get_u64(is));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    return EnergyNet(cfg, std::move(params));
  }

 private:
  static constexpr std::array<char, 8> kMagic{'E', 'F', 'L', 'O', 'W', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  explicit EnergyNet(const EnergyNetConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    using autodiff::Graph;
    Graph& g = graph_;
    action_node_ = g.input(cfg.action_dim);
    state_node_ = g.input(cfg.state_dim);
    time_node_ = g.input(1);
    const int temb = g.sinusoidal_embed(time_node_, time_frequencies(cfg.time_frequencies, cfg.time_freq_min, cfg.time_freq_max));
    int cond = g.mish(g.add(g.affine(state_node_, cfg.cond_hidden), g.affine(temb, cfg.cond_hidden)));
    cond = g.mish(g.affine(cond, cfg.cond_hidden));
    int h = g.mish(g.affine(action_node_, cfg.trunk_hidden));
    for (int b = 0; b < cfg.trunk_blocks; ++b) {
      const int z = g.affine(h, cfg.trunk_hidden);
      const int scale = g.affine(cond, cfg.trunk_hidden);
      const int shift = g.affine(cond, cfg.trunk_hidden);
      h = g.add(h, g.mish(g.film(z, scale, shift)));
    }
    const int e1 = g.mish(g.spectral_affine(h, cfg.head_hidden));
    const int e = g.spectral_affine(e1, 1);
    if (cfg.output_scaling) {
      scale_node_ = g.input(1);
      zero_node_ = g.input(1);
      g.set_output(g.film(e, scale_node_, zero_node_));
    } else {
      g.set_output(e);
    }
  }

  static void put_u32(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(b.data(), 4);
  }
  static void put_u64(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFFu);
    os.write(b.data(), 8);
  }
  static std::uint32_t get_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }
  static std::uint64_t get_u64(std::istream& is) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
    return v;
  }

  EnergyNetConfig cfg_;
  autodiff::Graph graph_;
  int action_node_ = -1;
  int state_node_ = -1;
  int time_node_ = -1;
  int scale_node_ = -1;
  int zero_node_ = -1;
  std::vector<double> params_;
  bool standard_ = true;
};

}  // namespace energyflow
