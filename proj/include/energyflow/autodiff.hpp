#pragma once

// Batched reverse-mode differentiation over a closed set of C^2 primitives,
// with a forward-over-reverse sweep for Hessian-vector products and for
// parameter gradients of losses that depend on an input gradient.
//
// Values are stored feature-major: a node of width `dim` evaluated on a batch
// of B samples holds a dim x B block.

#include "energyflow/mathcore.hpp"

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace energyflow::autodiff {

using Block = Eigen::MatrixXd;

/// x * tanh(softplus(x)).
inline double mish(double x) {
  if (x > 20.0) return x;
  const double e = std::exp(x);
  const double n = e * e + 2.0 * e;
  return x * n / (n + 2.0);
}

struct MishDerivatives {
  double value;
  double first;
  double second;
};

inline MishDerivatives mish_derivatives(double x) {
  const double xc = std::min(x, 20.0);
  const double e = std::exp(xc);
  const double n = e * e + 2.0 * e;
  const double w = n / (n + 2.0);        // tanh(softplus(x))
  const double sg = e / (1.0 + e);       // softplus'(x)
  const double sech2 = 1.0 - w * w;
  const double first = w + x * sech2 * sg;
  const double second = 2.0 * sech2 * sg + x * sech2 * sg * ((1.0 - sg) - 2.0 * w * sg);
  return {x * w, first, second};
}

enum class Op : std::uint8_t {
  input,
  affine,
  spectral_affine,
  mish,
  film,
  add,
  scale,
  sinusoidal_embed,
  half_sq_norm,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::affine: return "affine";
    case Op::spectral_affine: return "spectral_affine";
    case Op::mish: return "mish";
    case Op::film: return "film";
    case Op::add: return "add";
    case Op::scale: return "scale";
    case Op::sinusoidal_embed: return "sinusoidal_embed";
    case Op::half_sq_norm: return "half_sq_norm";
  }
  return "?";
}

/// Slice of the flat parameter vector; weights are column-major rows x cols.
struct ParamRef {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct Node {
  Op op = Op::input;
  int dim = 0;
  std::array<int, 3> args{-1, -1, -1};
  ParamRef weight;
  ParamRef bias;
  double factor = 1.0;
  std::vector<double> frequencies;
};

/// Static network topology plus the layout of its parameters. Nodes are
/// appended in topological order, so every argument precedes its consumer.
class Graph {
 public:
  int input(int dim) {
    require(dim > 0, "input: dim must be positive");
    Node n;
    n.op = Op::input;
    n.dim = dim;
    return push(std::move(n));
  }

  int affine(int x, int out_dim) { return linear_node(Op::affine, x, out_dim); }

  /// Affine map whose weight is kept inside the unit spectral ball by the
  /// owning model; differentiates exactly like `affine`.
  int spectral_affine(int x, int out_dim) { return linear_node(Op::spectral_affine, x, out_dim); }

  int mish(int x) {
    check_arg(x);
    Node n;
    n.op = Op::mish;
    n.dim = nodes_[x].dim;
    n.args[0] = x;
    return push(std::move(n));
  }

  /// (1 + scale) * x + shift, elementwise.
  int film(int x, int scale, int shift) {
    check_arg(x);
    check_arg(scale);
    check_arg(shift);
    require(nodes_[x].dim == nodes_[scale].dim && nodes_[x].dim == nodes_[shift].dim, "film: width mismatch");
    Node n;
    n.op = Op::film;
    n.dim = nodes_[x].dim;
    n.args = {x, scale, shift};
    return push(std::move(n));
  }

  int add(int a, int b) {
    check_arg(a);
    check_arg(b);
    require(nodes_[a].dim == nodes_[b].dim, "add: width mismatch");
    Node n;
    n.op = Op::add;
    n.dim = nodes_[a].dim;
    n.args[0] = a;
    n.args[1] = b;
    return push(std::move(n));
  }

  int scale(int x, double factor) {
    check_arg(x);
    Node n;
    n.op = Op::scale;
    n.dim = nodes_[x].dim;
    n.args[0] = x;
    n.factor = factor;
    return push(std::move(n));
  }

  /// [sin(f_i t); cos(f_i t)] for a scalar input t.
  int sinusoidal_embed(int t, std::vector<double> frequencies) {
    check_arg(t);
    require(nodes_[t].dim == 1, "sinusoidal_embed: input must be scalar");
    require(!frequencies.empty(), "sinusoidal_embed: no frequencies");
    Node n;
    n.op = Op::sinusoidal_embed;
    n.dim = 2 * static_cast<int>(frequencies.size());
    n.args[0] = t;
    n.frequencies = std::move(frequencies);
    return push(std::move(n));
  }

  /// 0.5 * ||x||^2 per sample.
  int half_sq_norm(int x) {
    check_arg(x);
    Node n;
    n.op = Op::half_sq_norm;
    n.dim = 1;
    n.args[0] = x;
    return push(std::move(n));
  }

  void set_output(int node) {
    check_arg(node);
    output_ = node;
  }

  int output() const { return output_ < 0 ? static_cast<int>(nodes_.size()) - 1 : output_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
  std::size_t param_count() const { return param_count_; }

  std::vector<int> nodes_of(Op op) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
      if (nodes_[i].op == op) out.push_back(i);
    return out;
  }

 private:
  static void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("Graph::") + msg);
  }
  void check_arg(int x) const { require(x >= 0 && x < static_cast<int>(nodes_.size()), "argument refers to an unknown node"); }

  int linear_node(Op op, int x, int out_dim) {
    check_arg(x);
    require(out_dim > 0, "affine: output width must be positive");
    Node n;
    n.op = op;
    n.dim = out_dim;
    n.args[0] = x;
    n.weight = {param_count_, out_dim, nodes_[x].dim};
    param_count_ += n.weight.size();
    n.bias = {param_count_, out_dim, 1};
    param_count_ += n.bias.size();
    return push(std::move(n));
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::size_t param_count_ = 0;
  int output_ = -1;
};

/// One evaluation of a Graph on a batch. Single owner; cheap to rebuild.
class Tape {
 public:
  enum class Order { first, second };

  Tape(const Graph& graph, std::span<const double> params, Order order = Order::second)
      : graph_(&graph), params_(params), order_(order) {
    if (params.size() != graph.param_count())
      throw std::invalid_argument("Tape: parameter vector has wrong length");
    const std::size_t n = graph.nodes().size();
    value_.resize(n);
    d1_.resize(n);
    d2_.resize(n);
    adjoint_.resize(n);
    has_adjoint_.assign(n, false);
    tangent_.resize(n);
    has_tangent_.assign(n, false);
    adjoint_tangent_.resize(n);
    has_adjoint_tangent_.assign(n, false);
    active_.assign(n, false);
  }

  Order order() const { return order_; }
  Eigen::Index batch() const { return batch_; }

  void set_input(int node, Block value) {
    const Node& nd = graph_->node(node);
    if (nd.op != Op::input) throw std::invalid_argument("Tape::set_input: node is not an input");
    if (value.rows() != nd.dim) throw std::invalid_argument("Tape::set_input: width mismatch");
    if (batch_ >= 0 && value.cols() != batch_) {
      bool others = false;
      for (int i = 0; i < static_cast<int>(value_.size()); ++i)
        if (i != node && graph_->node(i).op == Op::input && value_[i].size() > 0) others = true;
      if (others) throw std::invalid_argument("Tape::set_input: batch size mismatch");
    }
    batch_ = value.cols();
    value_[static_cast<std::size_t>(node)] = std::move(value);
    forward_done_ = false;
  }

  /// Primal pass. Records first (and, in second-order mode, second) local
  /// derivatives of every activation.
  void forward() {
    const auto& nodes = graph_->nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Node& n = nodes[i];
      Block& y = value_[i];
      switch (n.op) {
        case Op::input:
          if (y.cols() != batch_ || y.rows() != n.dim)
            throw std::invalid_argument("Tape::forward: input node " + std::to_string(i) + " not set");
          break;
        case Op::affine:
        case Op::spectral_affine: {
          const auto& x = value_[arg(n, 0)];
          y.noalias() = weight(n) * x;
          y.colwise() += bias(n);
          break;
        }
        case Op::mish: {
          const auto& x = value_[arg(n, 0)];
          y.resize(x.rows(), x.cols());
          d1_[i].resize(x.rows(), x.cols());
          if (order_ == Order::second) d2_[i].resize(x.rows(), x.cols());
          const double* xp = x.data();
          double* yp = y.data();
          double* d1p = d1_[i].data();
          double* d2p = order_ == Order::second ? d2_[i].data() : nullptr;
          for (Eigen::Index k = 0; k < x.size(); ++k) {
            const MishDerivatives md = mish_derivatives(xp[k]);
            yp[k] = md.value;
            d1p[k] = md.first;
            if (d2p) d2p[k] = md.second;
          }
          break;
        }
        case Op::film: {
          const auto& x = value_[arg(n, 0)];
          const auto& s = value_[arg(n, 1)];
          const auto& b = value_[arg(n, 2)];
          y = (1.0 + s.array()) * x.array() + b.array();
          break;
        }
        case Op::add:
          y = value_[arg(n, 0)] + value_[arg(n, 1)];
          break;
        case Op::scale:
          y = n.factor * value_[arg(n, 0)];
          break;
        case Op::sinusoidal_embed: {
          const auto& t = value_[arg(n, 0)];
          const int k = static_cast<int>(n.frequencies.size());
          y.resize(2 * k, t.cols());
          for (Eigen::Index c = 0; c < t.cols(); ++c) {
            for (int j = 0; j < k; ++j) {
              const double ph = n.frequencies[j] * t(0, c);
              y(j, c) = std::sin(ph);
              y(k + j, c) = std::cos(ph);
            }
          }
          break;
        }
        case Op::half_sq_norm:
          y = 0.5 * value_[arg(n, 0)].colwise().squaredNorm();
          break;
      }
    }
    forward_done_ = true;
    adjoint_wrt_ = -1;
  }

  const Block& value(int node) const { return value_.at(static_cast<std::size_t>(node)); }
  const Block& output() const { return value_.at(static_cast<std::size_t>(graph_->output())); }

  /// Gradient of the scalar output with respect to input node `wrt`, one
  /// column per sample. Other inputs are held constant.
  Block input_gradient(int wrt) {
    require_forward();
    const int out = graph_->output();
    if (graph_->node(out).dim != 1)
      throw contract_violation("input_gradient: network output is not scalar");
    if (graph_->node(wrt).op != Op::input) throw std::invalid_argument("input_gradient: wrt is not an input node");
    mark_active(wrt);
    std::fill(has_adjoint_.begin(), has_adjoint_.end(), false);
    accumulate(adjoint_, has_adjoint_, out, Block::Ones(1, batch_));
    reverse_sweep(/*active_only=*/true, nullptr);
    adjoint_wrt_ = wrt;
    return adjoint_of(wrt);
  }

  /// Full first-order reverse pass for an arbitrary output adjoint. Adds the
  /// batch-summed parameter gradient into `param_grad`; input adjoints are
  /// then available through `adjoint_of`.
  void backward(const Block& output_adjoint, Eigen::Ref<Eigen::VectorXd> param_grad) {
    require_forward();
    const int out = graph_->output();
    if (output_adjoint.rows() != graph_->node(out).dim || output_adjoint.cols() != batch_)
      throw std::invalid_argument("backward: output adjoint has wrong shape");
    if (param_grad.size() != static_cast<Eigen::Index>(graph_->param_count()))
      throw std::invalid_argument("backward: gradient buffer has wrong length");
    std::fill(has_adjoint_.begin(), has_adjoint_.end(), false);
    std::fill(active_.begin(), active_.end(), true);
    accumulate(adjoint_, has_adjoint_, out, output_adjoint);
    reverse_sweep(/*active_only=*/false, &param_grad);
    adjoint_wrt_ = -1;
  }

  Block adjoint_of(int node) const {
    const auto i = static_cast<std::size_t>(node);
    if (!has_adjoint_[i]) return Block::Zero(graph_->node(node).dim, batch_);
    return adjoint_[i];
  }

  /// Per-sample Hessian of the output w.r.t. `wrt` applied to `direction`.
  /// Requires a preceding input_gradient(wrt).
  Block hessian_vector(int wrt, const Block& direction) {
    Block hv;
    tangent_sweep(wrt, direction, nullptr, &hv);
    return hv;
  }

  /// Adds sum_b grad_phi( direction_b . grad_wrt E_b ) into `param_grad`:
  /// the parameter gradient of any loss whose derivative with respect to the
  /// input gradient is `direction`. Requires a preceding input_gradient(wrt).
  void mixed_param_gradient(int wrt, const Block& direction, Eigen::Ref<Eigen::VectorXd> param_grad) {
    if (param_grad.size() != static_cast<Eigen::Index>(graph_->param_count()))
      throw std::invalid_argument("mixed_param_gradient: gradient buffer has wrong length");
    tangent_sweep(wrt, direction, &param_grad, nullptr);
  }

 private:
  using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
  using GradMap = Eigen::Map<Eigen::MatrixXd>;

  static std::size_t arg(const Node& n, int k) { return static_cast<std::size_t>(n.args[k]); }

  ConstMap weight(const Node& n) const {
    return ConstMap(params_.data() + n.weight.offset, n.weight.rows, n.weight.cols);
  }
  ConstVecMap bias(const Node& n) const { return ConstVecMap(params_.data() + n.bias.offset, n.bias.rows); }

  static GradMap weight_grad(const Node& n, Eigen::Ref<Eigen::VectorXd>& g) {
    return GradMap(g.data() + n.weight.offset, n.weight.rows, n.weight.cols);
  }
  static Eigen::Map<Eigen::VectorXd> bias_grad(const Node& n, Eigen::Ref<Eigen::VectorXd>& g) {
    return Eigen::Map<Eigen::VectorXd>(g.data() + n.bias.offset, n.bias.rows);
  }

  void require_forward() const {
    if (!forward_done_) throw contract_violation("Tape: forward() has not been run on the current inputs");
  }

  void mark_active(int wrt) {
    const auto& nodes = graph_->nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Node& n = nodes[i];
      bool a = static_cast<int>(i) == wrt;
      for (int k = 0; k < 3 && !a; ++k)
        if (n.args[k] >= 0 && active_[arg(n, k)]) a = true;
      active_[i] = a;
    }
  }

  template <typename Expr>
  static void accumulate(std::vector<Block>& store, std::vector<bool>& has, std::size_t i, const Expr& e) {
    if (has[i]) {
      store[i] += e;
    } else {
      store[i] = e;
      has[i] = true;
    }
  }
  template <typename Expr>
  static void accumulate(std::vector<Block>& store, std::vector<bool>& has, int i, const Expr& e) {
    accumulate(store, has, static_cast<std::size_t>(i), e);
  }

  // Propagates adjoint_ backwards. With active_only, only nodes that depend on
  // the differentiated input receive adjoints (parameters are ignored).
  void reverse_sweep(bool active_only, Eigen::Ref<Eigen::VectorXd>* param_grad) {
    const auto& nodes = graph_->nodes();
    for (std::size_t ii = nodes.size(); ii-- > 0;) {
      if (!has_adjoint_[ii]) continue;
      const Node& n = nodes[ii];
      const Block& g = adjoint_[ii];
      auto wants = [&](int k) { return n.args[k] >= 0 && (!active_only || active_[arg(n, k)]); };
      switch (n.op) {
        case Op::input:
          break;
        case Op::affine:
        case Op::spectral_affine: {
          if (param_grad) {
            weight_grad(n, *param_grad).noalias() += g * value_[arg(n, 0)].transpose();
            bias_grad(n, *param_grad) += g.rowwise().sum();
          }
          if (wants(0)) accumulate(adjoint_, has_adjoint_, arg(n, 0), weight(n).transpose() * g);
          break;
        }
        case Op::mish:
          if (wants(0)) accumulate(adjoint_, has_adjoint_, arg(n, 0), d1_[ii].cwiseProduct(g));
          break;
        case Op::film: {
          const auto& x = value_[arg(n, 0)];
          const auto& s = value_[arg(n, 1)];
          if (wants(0)) accumulate(adjoint_, has_adjoint_, arg(n, 0), ((1.0 + s.array()) * g.array()).matrix());
          if (wants(1)) accumulate(adjoint_, has_adjoint_, arg(n, 1), x.cwiseProduct(g));
          if (wants(2)) accumulate(adjoint_, has_adjoint_, arg(n, 2), g);
          break;
        }
        case Op::add:
          if (wants(0)) accumulate(adjoint_, has_adjoint_, arg(n, 0), g);
          if (wants(1)) accumulate(adjoint_, has_adjoint_, arg(n, 1), g);
          break;
        case Op::scale:
          if (wants(0)) accumulate(adjoint_, has_adjoint_, arg(n, 0), n.factor * g);
          break;
        case Op::sinusoidal_embed: {
          if (!wants(0)) break;
          const auto& t = value_[arg(n, 0)];
          const int k = static_cast<int>(n.frequencies.size());
          Block gt = Block::Zero(1, t.cols());
          for (Eigen::Index c = 0; c < t.cols(); ++c) {
            for (int j = 0; j < k; ++j) {
              const double f = n.frequencies[j];
              const double ph = f * t(0, c);
              gt(0, c) += f * std::cos(ph) * g(j, c) - f * std::sin(ph) * g(k + j, c);
            }
          }
          accumulate(adjoint_, has_adjoint_, arg(n, 0), gt);
          break;
        }
        case Op::half_sq_norm: {
          if (!wants(0)) break;
          const auto& x = value_[arg(n, 0)];
          accumulate(adjoint_, has_adjoint_, arg(n, 0), (x.array().rowwise() * g.row(0).array()).matrix());
          break;
        }
      }
    }
  }

  // Forward tangent seeded at `wrt`, then the tangent of the reverse pass.
  // Fills the adjoint tangent of `wrt` (Hessian-vector product) and/or adds
  // the tangent of every parameter adjoint into `param_grad`.
  void tangent_sweep(int wrt, const Block& direction, Eigen::Ref<Eigen::VectorXd>* param_grad, Block* hv) {
    if (order_ != Order::second)
      throw contract_violation("second-order sweep on a tape recorded without second derivatives");
    require_forward();
    if (adjoint_wrt_ != wrt)
      throw contract_violation("second-order sweep requires input_gradient() on the same input first");
    if (direction.rows() != graph_->node(wrt).dim || direction.cols() != batch_)
      throw std::invalid_argument("tangent direction has wrong shape");

    const auto& nodes = graph_->nodes();
    const std::size_t count = nodes.size();
    std::fill(has_tangent_.begin(), has_tangent_.end(), false);
    std::fill(has_adjoint_tangent_.begin(), has_adjoint_tangent_.end(), false);

    // forward tangent
    tangent_[static_cast<std::size_t>(wrt)] = direction;
    has_tangent_[static_cast<std::size_t>(wrt)] = true;
    for (std::size_t i = static_cast<std::size_t>(wrt) + 1; i < count; ++i) {
      if (!active_[i]) continue;
      const Node& n = nodes[i];
      auto t = [&](int k) -> const Block* {
        const std::size_t a = arg(n, k);
        return (n.args[k] >= 0 && has_tangent_[a]) ? &tangent_[a] : nullptr;
      };
      Block& out = tangent_[i];
      switch (n.op) {
        case Op::input:
          continue;
        case Op::affine:
        case Op::spectral_affine:
          out.noalias() = weight(n) * *t(0);
          break;
        case Op::mish:
          out = d1_[i].cwiseProduct(*t(0));
          break;
        case Op::film: {
          const auto& x = value_[arg(n, 0)];
          const auto& s = value_[arg(n, 1)];
          out = Block::Zero(n.dim, batch_);
          if (t(0)) out.array() += (1.0 + s.array()) * t(0)->array();
          if (t(1)) out.array() += x.array() * t(1)->array();
          if (t(2)) out += *t(2);
          break;
        }
        case Op::add:
          out = Block::Zero(n.dim, batch_);
          if (t(0)) out += *t(0);
          if (t(1)) out += *t(1);
          break;
        case Op::scale:
          out = n.factor * *t(0);
          break;
        case Op::sinusoidal_embed: {
          const auto& tv = value_[arg(n, 0)];
          const int k = static_cast<int>(n.frequencies.size());
          out.resize(2 * k, batch_);
          for (Eigen::Index c = 0; c < batch_; ++c) {
            for (int j = 0; j < k; ++j) {
              const double f = n.frequencies[j];
              const double ph = f * tv(0, c);
              out(j, c) = f * std::cos(ph) * (*t(0))(0, c);
              out(k + j, c) = -f * std::sin(ph) * (*t(0))(0, c);
            }
          }
          break;
        }
        case Op::half_sq_norm:
          out = value_[arg(n, 0)].cwiseProduct(*t(0)).colwise().sum();
          break;
      }
      has_tangent_[i] = true;
    }

    // reverse tangent: d/d(eps) of the adjoint recurrence. The seed adjoint
    // of the output is constant, so its tangent is zero; contributions enter
    // through products with nonzero primal tangents.
    for (std::size_t ii = count; ii-- > 0;) {
      const Node& n = nodes[ii];
      const bool has_at = has_adjoint_tangent_[ii];
      const bool has_t = has_tangent_[ii];
      if (!has_at && !has_t) continue;
      const Block* at = has_at ? &adjoint_tangent_[ii] : nullptr;
      const Block* g = has_adjoint_[ii] ? &adjoint_[ii] : nullptr;
      auto tan = [&](int k) -> const Block* {
        const std::size_t a = arg(n, k);
        return (n.args[k] >= 0 && has_tangent_[a]) ? &tangent_[a] : nullptr;
      };
      switch (n.op) {
        case Op::input:
          break;
        case Op::affine:
        case Op::spectral_affine: {
          const Block* tx = tan(0);
          if (param_grad) {
            auto gw = weight_grad(n, *param_grad);
            if (at) {
              gw.noalias() += *at * value_[arg(n, 0)].transpose();
              bias_grad(n, *param_grad) += at->rowwise().sum();
            }
            if (tx && g) gw.noalias() += *g * tx->transpose();
          }
          if (at) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), weight(n).transpose() * *at);
          break;
        }
        case Op::mish: {
          const Block* tx = tan(0);
          Block contrib = Block::Zero(n.dim, batch_);
          bool any = false;
          if (tx && g) {
            contrib.array() += d2_[ii].array() * tx->array() * g->array();
            any = true;
          }
          if (at) {
            contrib.array() += d1_[ii].array() * at->array();
            any = true;
          }
          if (any) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), contrib);
          break;
        }
        case Op::film: {
          const auto& x = value_[arg(n, 0)];
          const auto& s = value_[arg(n, 1)];
          const Block* tx = tan(0);
          const Block* ts = tan(1);
          // d adj_x = ds * g + (1 + s) * d g
          {
            Block c = Block::Zero(n.dim, batch_);
            bool any = false;
            if (ts && g) { c.array() += ts->array() * g->array(); any = true; }
            if (at) { c.array() += (1.0 + s.array()) * at->array(); any = true; }
            if (any) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), c);
          }
          // d adj_s = dx * g + x * d g
          {
            Block c = Block::Zero(n.dim, batch_);
            bool any = false;
            if (tx && g) { c.array() += tx->array() * g->array(); any = true; }
            if (at) { c.array() += x.array() * at->array(); any = true; }
            if (any) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 1), c);
          }
          if (at) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 2), *at);
          break;
        }
        case Op::add:
          if (at) {
            accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), *at);
            accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 1), *at);
          }
          break;
        case Op::scale:
          if (at) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), n.factor * *at);
          break;
        case Op::sinusoidal_embed: {
          const auto& tv = value_[arg(n, 0)];
          const Block* tt = tan(0);
          const int k = static_cast<int>(n.frequencies.size());
          Block c = Block::Zero(1, batch_);
          bool any = false;
          for (Eigen::Index col = 0; col < batch_; ++col) {
            for (int j = 0; j < k; ++j) {
              const double f = n.frequencies[j];
              const double ph = f * tv(0, col);
              if (tt && g) {
                c(0, col) += -f * f * (*tt)(0, col) * (std::sin(ph) * (*g)(j, col) + std::cos(ph) * (*g)(k + j, col));
                any = true;
              }
              if (at) {
                c(0, col) += f * std::cos(ph) * (*at)(j, col) - f * std::sin(ph) * (*at)(k + j, col);
                any = true;
              }
            }
          }
          if (any) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), c);
          break;
        }
        case Op::half_sq_norm: {
          const auto& x = value_[arg(n, 0)];
          const Block* tx = tan(0);
          Block c = Block::Zero(x.rows(), batch_);
          bool any = false;
          if (tx && g) { c.array() += tx->array().rowwise() * g->row(0).array(); any = true; }
          if (at) { c.array() += x.array().rowwise() * at->row(0).array(); any = true; }
          if (any) accumulate(adjoint_tangent_, has_adjoint_tangent_, arg(n, 0), c);
          break;
        }
      }
    }

    if (hv) {
      const auto w = static_cast<std::size_t>(wrt);
      *hv = has_adjoint_tangent_[w] ? adjoint_tangent_[w] : Block::Zero(direction.rows(), batch_);
    }
  }

  const Graph* graph_;
  std::span<const double> params_;
  Order order_;
  Eigen::Index batch_ = -1;
  bool forward_done_ = false;
  int adjoint_wrt_ = -1;

  std::vector<Block> value_;
  std::vector<Block> d1_;
  std::vector<Block> d2_;
  std::vector<Block> adjoint_;
  std::vector<bool> has_adjoint_;
  std::vector<Block> tangent_;
  std::vector<bool> has_tangent_;
  std::vector<Block> adjoint_tangent_;
  std::vector<bool> has_adjoint_tangent_;
  std::vector<bool> active_;
};

// ---------------------------------------------------------------------------
// single-sample conveniences

/// Gradient of the scalar output with respect to input `wrt` for one sample.
/// `inputs` pairs every other input node with its (constant) value.
inline RealVector input_gradient(const Graph& graph, std::span<const double> params, int wrt, const RealVector& x,
                                 std::span<const std::pair<int, RealVector>> context) {
  Tape tape(graph, params, Tape::Order::first);
  tape.set_input(wrt, x);
  for (const auto& [node, value] : context) tape.set_input(node, value);
  tape.forward();
  return tape.input_gradient(wrt).col(0);
}

/// Parameter gradient of loss(grad_wrt E) for one sample. `loss_grad` maps
/// the input gradient g to (loss, dloss/dg).
template <typename LossGrad>
std::pair<double, Eigen::VectorXd> param_gradient_of_score_loss(const Graph& graph, std::span<const double> params,
                                                                int wrt, const RealVector& x,
                                                                std::span<const std::pair<int, RealVector>> context,
                                                                LossGrad&& loss_grad) {
  Tape tape(graph, params, Tape::Order::second);
  tape.set_input(wrt, x);
  for (const auto& [node, value] : context) tape.set_input(node, value);
  tape.forward();
  const RealVector g = tape.input_gradient(wrt).col(0);
  auto [loss, dl_dg] = loss_grad(g);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(graph.param_count()));
  tape.mixed_param_gradient(wrt, Block(dl_dg), grad);
  return {loss, grad};
}

/// Hessian of the scalar output with respect to input `wrt`, built column by
/// column from forward-over-reverse sweeps.
inline RealMatrix input_hessian(const Graph& graph, std::span<const double> params, int wrt, const RealVector& x,
                                std::span<const std::pair<int, RealVector>> context) {
  Tape tape(graph, params, Tape::Order::second);
  tape.set_input(wrt, x);
  for (const auto& [node, value] : context) tape.set_input(node, value);
  tape.forward();
  tape.input_gradient(wrt);
  const Eigen::Index d = x.size();
  RealMatrix h(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Block e = Block::Zero(d, 1);
    e(j, 0) = 1.0;
    h.col(j) = tape.hessian_vector(wrt, e).col(0);
  }
  return h;
}

}  // namespace energyflow::autodiff
