#ifndef TENSORTREE_AUTODIFF_HPP
#define TENSORTREE_AUTODIFF_HPP

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tensortree/tensor.hpp"

namespace tensortree {

/// A named trainable tensor. Its address identifies it on a tape.
struct Parameter {
  std::string name;
  DenseTensor value;
};

/// Gradient of a scalar with respect to each parameter reachable from it.
class Gradients {
 public:
  /// Accumulated gradient, or nullptr when `p` was not reached.
  const DenseTensor* find(const Parameter& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  /// Gradient for `p`; zeros when `p` was not reached.
  DenseTensor get(const Parameter& p) const {
    if (const DenseTensor* g = find(p)) return *g;
    return DenseTensor(p.value.shape());
  }

  DenseTensor& slot(const Parameter& p) {
    auto it = grads_.find(&p);
    if (it == grads_.end())
      it = grads_.emplace(&p, DenseTensor(p.value.shape())).first;
    return it->second;
  }

  void accumulate(const Gradients& other) {
    for (const auto& [param, grad] : other.grads_) slot(*param) += grad;
  }

  void scale(double s) {
    for (auto& entry : grads_) entry.second *= s;
  }

  std::size_t size() const noexcept { return grads_.size(); }
  bool empty() const noexcept { return grads_.empty(); }

 private:
  std::unordered_map<const Parameter*, DenseTensor> grads_;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
};

/**
 * Reverse-mode differentiation record.
 *
 * Each primitive appends one node holding its output value and the indices
 * of its inputs; inputs always precede the node that consumes them. backward()
 * walks the nodes once in reverse, applying each primitive's adjoint rule.
 * A tape is confined to a single thread.
 */
class Tape {
 public:
  enum class Op : std::uint8_t {
    Constant,
    Param,
    Affine,       // W x (+ b)
    Add,          // a + b + ...
    Hadamard,     // a (.) b
    Contract,     // T x_1 v1 ... x_L vL
    Homogenize,   // [v; 1]
    Sigmoid,
    Tanh,
    Relu,
    Sum,          // scalar sum of all entries
    Dot,          // scalar <a, b>
    NegLogSoftmax // -log softmax(z)[target]
  };

  Var constant(DenseTensor value) {
    return push(Op::Constant, {}, std::move(value), false);
  }

  /// Leaf for a parameter; repeated calls for the same parameter share a node.
  Var param(const Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(Op::Param, {}, DenseTensor{}, true);
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  const DenseTensor& value(Var v) const { return value_of(v.id); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// y = W x + b; pass an invalid Var for b to omit the bias.
  Var affine(Var w, Var x, Var b = {}) {
    const DenseTensor& wv = value(w);
    const DenseTensor& xv = value(x);
    const bool has_bias = valid(b);
    if (!wv.is_matrix() || !xv.is_vector() || wv.dim(1) != xv.size())
      throw DimensionError("affine shape mismatch: W " + shape_string(wv.shape()) +
                           ", x " + shape_string(xv.shape()));
    DenseTensor y(Shape{wv.dim(0)});
    if (has_bias) {
      const DenseTensor& bv = value(b);
      if (bv.shape() != y.shape())
        throw DimensionError("affine shape mismatch: W " +
                             shape_string(wv.shape()) + ", b " +
                             shape_string(bv.shape()));
      y = bv;
    }
    detail::matvec(wv.data(), wv.dim(0), wv.dim(1), xv.data(), y.data());
    if (has_bias) return push(Op::Affine, {w.id, x.id, b.id}, std::move(y));
    return push(Op::Affine, {w.id, x.id}, std::move(y));
  }

  Var add(Var a, Var b) { return add(std::vector<Var>{a, b}); }

  Var add(std::span<const Var> terms) {
    if (terms.empty()) throw DimensionError("add needs at least one term");
    DenseTensor y = value(terms[0]);
    std::vector<std::uint32_t> ids{terms[0].id};
    for (std::size_t i = 1; i < terms.size(); ++i) {
      y += value(terms[i]);
      ids.push_back(terms[i].id);
    }
    return push(Op::Add, std::move(ids), std::move(y));
  }

  Var add(const std::vector<Var>& terms) { return add(std::span<const Var>(terms)); }

  Var hadamard(Var a, Var b) {
    return push(Op::Hadamard, {a.id, b.id},
                tensortree::hadamard(value(a), value(b)));
  }

  Var contract(Var t, std::span<const Var> vs) {
    std::vector<const DenseTensor*> ptrs;
    std::vector<std::uint32_t> ids{t.id};
    for (Var v : vs) {
      ptrs.push_back(&value(v));
      ids.push_back(v.id);
    }
    DenseTensor y = contract_multiaffine(value(t), ptrs);
    return push(Op::Contract, std::move(ids), std::move(y));
  }

  Var contract(Var t, const std::vector<Var>& vs) {
    return contract(t, std::span<const Var>(vs));
  }

  Var homogenize(Var v) {
    return push(Op::Homogenize, {v.id}, tensortree::homogenize(value(v)));
  }

  Var sigmoid(Var v) {
    return unary(Op::Sigmoid, v, [](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
  }

  Var tanh(Var v) {
    return unary(Op::Tanh, v, [](double x) { return std::tanh(x); });
  }

  Var relu(Var v) {
    return unary(Op::Relu, v, [](double x) { return x > 0.0 ? x : 0.0; });
  }

  Var sum(Var v) {
    double acc = 0.0;
    for (double x : value(v).data()) acc += x;
    return push(Op::Sum, {v.id}, DenseTensor::vector({acc}));
  }

  Var dot(Var a, Var b) {
    const DenseTensor& av = value(a);
    const DenseTensor& bv = value(b);
    DenseTensor::require_same_shape(av, bv, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    return push(Op::Dot, {a.id, b.id}, DenseTensor::vector({acc}));
  }

  /// -log softmax(logits)[target], evaluated with max-subtraction.
  Var neg_log_softmax(Var logits, std::size_t target) {
    const DenseTensor& z = value(logits);
    detail::require_vector(z, "logits");
    if (target >= z.size())
      throw std::out_of_range("target class " + std::to_string(target) +
                              " out of range for " + std::to_string(z.size()) +
                              " logits");
    const double loss = log_sum_exp(z.data()) - z[target];
    Var out = push(Op::NegLogSoftmax, {logits.id},
                   DenseTensor::vector({loss > 0.0 ? loss : 0.0}));
    nodes_[out.id].aux = target;
    return out;
  }

  /**
   * Back-propagates from the scalar `loss` and returns the gradient of every
   * parameter reachable from it.
   */
  Gradients backward(Var loss) {
    const DenseTensor& lv = value(loss);
    if (lv.size() != 1)
      throw std::logic_error("backward requires a scalar loss, got shape " +
                             shape_string(lv.shape()));
    grads_.assign(nodes_.size(), DenseTensor{});
    grad_ready_.assign(nodes_.size(), false);
    grad(loss.id)[0] = 1.0;

    Gradients out;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      if (!grad_ready_[i]) continue;
      const Node& node = nodes_[i];
      if (node.op == Op::Param) {
        out.slot(*node.param) += grads_[i];
        continue;
      }
      propagate(static_cast<std::uint32_t>(i));
    }
    return out;
  }

  /// Adjoint of `v` from the last backward(); zeros if unreached.
  DenseTensor adjoint(Var v) const {
    if (v.id < grad_ready_.size() && grad_ready_[v.id]) return grads_[v.id];
    return DenseTensor(value(v).shape());
  }

 private:
  struct Node {
    Op op;
    bool requires_grad;
    std::vector<std::uint32_t> inputs;
    DenseTensor value;
    const Parameter* param = nullptr;
    std::size_t aux = 0;
  };

  static bool valid(Var v) {
    return v.id != std::numeric_limits<std::uint32_t>::max();
  }

  static double log_sum_exp(std::span<const double> z) {
    double m = z[0];
    for (double x : z) m = std::max(m, x);
    double s = 0.0;
    for (double x : z) s += std::exp(x - m);
    return m + std::log(s);
  }

  const DenseTensor& value_of(std::uint32_t id) const {
    assert(id < nodes_.size());
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }

  Var push(Op op, std::vector<std::uint32_t> inputs, DenseTensor value) {
    bool rg = false;
    for (auto id : inputs) rg = rg || nodes_[id].requires_grad;
    return push(op, std::move(inputs), std::move(value), rg);
  }

  Var push(Op op, std::vector<std::uint32_t> inputs, DenseTensor value,
           bool requires_grad) {
    nodes_.push_back(Node{op, requires_grad, std::move(inputs), std::move(value)});
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <typename F>
  Var unary(Op op, Var v, F&& f) {
    DenseTensor y = value(v);
    for (double& x : y.storage()) x = f(x);
    return push(op, {v.id}, std::move(y));
  }

  // Gradient buffer for node `id`, allocated on first use.
  DenseTensor& grad(std::uint32_t id) {
    if (!grad_ready_[id]) {
      grads_[id] = DenseTensor(value_of(id).shape());
      grad_ready_[id] = true;
    }
    return grads_[id];
  }

  bool wants(std::uint32_t id) const { return nodes_[id].requires_grad; }

  void propagate(std::uint32_t id) {
    const Node& node = nodes_[id];
    const DenseTensor& g = grads_[id];
    const auto& in = node.inputs;
    switch (node.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::Affine: {
        const DenseTensor& w = value_of(in[0]);
        const DenseTensor& x = value_of(in[1]);
        if (wants(in[0])) detail::outer_accumulate(g.data(), x.data(), grad(in[0]).data());
        if (wants(in[1]))
          detail::matvec_transposed(w.data(), w.dim(0), w.dim(1), g.data(),
                                    grad(in[1]).data());
        if (in.size() > 2 && wants(in[2])) grad(in[2]) += g;
        break;
      }
      case Op::Add:
        for (auto input : in)
          if (wants(input)) grad(input) += g;
        break;
      case Op::Hadamard: {
        const DenseTensor& a = value_of(in[0]);
        const DenseTensor& b = value_of(in[1]);
        if (wants(in[0])) {
          DenseTensor& ga = grad(in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        }
        if (wants(in[1])) {
          DenseTensor& gb = grad(in[1]);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::Contract:
        propagate_contract(id);
        break;
      case Op::Homogenize:
        if (wants(in[0])) {
          DenseTensor& gv = grad(in[0]);
          for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
        }
        break;
      case Op::Sigmoid:
        if (wants(in[0])) {
          DenseTensor& gv = grad(in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = node.value[i];
            gv[i] += g[i] * y * (1.0 - y);
          }
        }
        break;
      case Op::Tanh:
        if (wants(in[0])) {
          DenseTensor& gv = grad(in[0]);
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double y = node.value[i];
            gv[i] += g[i] * (1.0 - y * y);
          }
        }
        break;
      case Op::Relu:
        if (wants(in[0])) {
          DenseTensor& gv = grad(in[0]);
          for (std::size_t i = 0; i < g.size(); ++i)
            if (node.value[i] > 0.0) gv[i] += g[i];
        }
        break;
      case Op::Sum:
        if (wants(in[0])) {
          DenseTensor& gv = grad(in[0]);
          for (double& x : gv.storage()) x += g[0];
        }
        break;
      case Op::Dot: {
        const DenseTensor& a = value_of(in[0]);
        const DenseTensor& b = value_of(in[1]);
        if (wants(in[0])) {
          DenseTensor& ga = grad(in[0]);
          for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[0] * b[i];
        }
        if (wants(in[1])) {
          DenseTensor& gb = grad(in[1]);
          for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[0] * a[i];
        }
        break;
      }
      case Op::NegLogSoftmax:
        if (wants(in[0])) {
          const DenseTensor& z = value_of(in[0]);
          const double lse = log_sum_exp(z.data());
          DenseTensor& gz = grad(in[0]);
          for (std::size_t k = 0; k < z.size(); ++k) {
            const double p = std::exp(z[k] - lse);
            gz[k] += g[0] * (p - (k == node.aux ? 1.0 : 0.0));
          }
        }
        break;
    }
  }

  // Adjoints of out(k) = sum T(j1..jL,k) v1(j1)...vL(jL).
  void propagate_contract(std::uint32_t id) {
    const Node& node = nodes_[id];
    const DenseTensor& g = grads_[id];
    const auto& in = node.inputs;
    const DenseTensor& t = value_of(in[0]);
    const std::size_t modes = in.size() - 1;

    if (wants(in[0])) {
      // dT = v1 (x) v2 (x) ... (x) vL (x) g
      std::vector<double> outer{1.0};
      for (std::size_t j = 1; j <= modes; ++j) {
        const DenseTensor& v = value_of(in[j]);
        std::vector<double> next(outer.size() * v.size());
        for (std::size_t a = 0; a < outer.size(); ++a)
          for (std::size_t b = 0; b < v.size(); ++b)
            next[a * v.size() + b] = outer[a] * v[b];
        outer = std::move(next);
      }
      DenseTensor& gt = grad(in[0]);
      const std::size_t k = g.size();
      for (std::size_t a = 0; a < outer.size(); ++a) {
        const double oa = outer[a];
        if (oa == 0.0) continue;
        double* dst = gt.storage().data() + a * k;
        for (std::size_t b = 0; b < k; ++b) dst[b] += oa * g[b];
      }
    }

    bool any_vector = false;
    for (std::size_t j = 1; j <= modes; ++j) any_vector = any_vector || wants(in[j]);
    if (!any_vector) return;

    // prefix = (T x_out g) contracted with v1..v_{j-1} on its leading modes;
    // dv_j is prefix contracted with vL..v_{j+1} on its trailing modes.
    std::vector<double> prefix = detail::contract_trailing(t.data(), g.data());
    for (std::size_t j = 1; j <= modes; ++j) {
      if (wants(in[j])) {
        std::vector<double> cur = prefix;
        for (std::size_t m = modes; m > j; --m)
          cur = detail::contract_trailing(cur, value_of(in[m]).data());
        DenseTensor& gv = grad(in[j]);
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += cur[i];
      }
      if (j < modes) prefix = detail::contract_leading(prefix, value_of(in[j]).data());
    }
  }

  std::vector<Node> nodes_;
  std::vector<DenseTensor> grads_;
  std::vector<bool> grad_ready_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

/**
 * Central-difference gradient of a scalar function, perturbing `p` in place
 * one coordinate at a time. `p` is restored before returning.
 */
inline DenseTensor finite_difference_grad(const std::function<double()>& f,
                                          DenseTensor& p, double step) {
  DenseTensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double up = f();
    p[i] = saved - step;
    const double down = f();
    p[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

/// Convenience overload for functions of the tensor value itself.
inline DenseTensor finite_difference_grad(
    const std::function<double(const DenseTensor&)>& f, const DenseTensor& p,
    double step) {
  DenseTensor x = p;
  return finite_difference_grad([&] { return f(x); }, x, step);
}

}  // namespace tensortree

#endif  // TENSORTREE_AUTODIFF_HPP
