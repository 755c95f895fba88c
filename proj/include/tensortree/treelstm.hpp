#ifndef TENSORTREE_TREELSTM_HPP
#define TENSORTREE_TREELSTM_HPP

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tensortree/aggregators.hpp"
#include "tensortree/autodiff.hpp"
#include "tensortree/datasets.hpp"
#include "tensortree/tree.hpp"

namespace tensortree {

enum class UpdateActivation { Tanh, Sigmoid };

inline std::string_view to_string(UpdateActivation a) {
  return a == UpdateActivation::Tanh ? "tanh" : "sigmoid";
}

inline std::optional<UpdateActivation> parse_update_activation(std::string_view s) {
  if (s == "tanh") return UpdateActivation::Tanh;
  if (s == "sigmoid") return UpdateActivation::Sigmoid;
  return std::nullopt;
}

struct TreeLstmConfig {
  AggregatorKind kind = AggregatorKind::Sum;
  std::size_t hidden = 0;
  std::size_t outdegree = 0;
  std::size_t rank = 0;  // ignored by Sum and Full
  UpdateActivation update_activation = UpdateActivation::Tanh;
  /// Leaf symbol -> feature vector; all vectors share one length.
  std::map<std::string, DenseTensor> leaf_features;
  /// Internal-node labels, each with its own parameter set.
  std::vector<std::string> operators;
};

/// Leaf features and operator labels for a task.
inline TreeLstmConfig task_config(Task task, AggregatorKind kind, std::size_t hidden,
                                  std::size_t rank, std::size_t outdegree) {
  TreeLstmConfig cfg;
  cfg.kind = kind;
  cfg.hidden = hidden;
  cfg.rank = uses_rank(kind) ? rank : 0;
  if (task == Task::Boolean) {
    cfg.outdegree = outdegree;
    cfg.leaf_features = {{"0", encode_boolean_leaf(0)}, {"1", encode_boolean_leaf(1)}};
    cfg.operators.assign(kBooleanOperators.begin(), kBooleanOperators.end());
  } else {
    cfg.outdegree = kListOpsMaxArity;
    for (std::size_t k = 0; k < 10; ++k) cfg.leaf_features[std::to_string(k)] = encode_digit(k);
    cfg.operators.assign(kListOpsOperators.begin(), kListOpsOperators.end());
  }
  return cfg;
}

/// Parameters selected by one internal-node label.
struct CellParams {
  AggregatorParams input_gate;
  AggregatorParams output_gate;
  AggregatorParams update;
  std::vector<AffineMap> forget;  // one per child position

  template <typename F>
  void for_each_parameter(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    visit(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    self.input_gate.for_each_parameter(f);
    self.output_gate.for_each_parameter(f);
    self.update.for_each_parameter(f);
    for (auto& m : self.forget) {
      f(m.weight);
      f(m.bias);
    }
  }
};

/// Hidden state and memory cell of a node, as tape values.
struct NodeState {
  Var h;
  Var memory;
};

/**
 * N-ary Tree-LSTM encoder. Leaves map their feature vector through a shared
 * affine layer and a logistic; internal nodes run the gated cell with the
 * parameters of their operator label.
 */
class TreeLstm {
 public:
  TreeLstm(TreeLstmConfig config, Rng& rng) : config_(std::move(config)) {
    if (config_.leaf_features.empty()) throw std::invalid_argument("no leaf symbols");
    if (config_.operators.empty()) throw std::invalid_argument("no operator labels");
    const std::size_t c = config_.hidden, L = config_.outdegree;
    leaf_dim_ = config_.leaf_features.begin()->second.size();
    for (const auto& [sym, x] : config_.leaf_features)
      if (!x.is_vector() || x.size() != leaf_dim_)
        throw DimensionError("leaf feature for '" + sym + "' has inconsistent length");
    leaf_ = make_affine("leaf", c, leaf_dim_, rng);
    // new_aggregator ignores the rank for Sum and Full.
    const std::optional<std::size_t> rank = config_.rank;
    for (const auto& op : config_.operators) {
      const std::string base = "op=" + op + "/gate=";
      CellParams cell{
          new_aggregator(config_.kind, c, L, rank, rng, base + "i/aggr/"),
          new_aggregator(config_.kind, c, L, rank, rng, base + "o/aggr/"),
          new_aggregator(config_.kind, c, L, rank, rng, base + "u/aggr/"),
          {}};
      for (std::size_t j = 0; j < L; ++j)
        cell.forget.push_back(make_affine(base + "f/u" + std::to_string(j + 1), c, c, rng));
      cells_.emplace(op, std::move(cell));
    }
  }

  // Parameters are identified by address; copies would alias gradient maps.
  TreeLstm(const TreeLstm&) = delete;
  TreeLstm& operator=(const TreeLstm&) = delete;
  TreeLstm(TreeLstm&&) = default;
  TreeLstm& operator=(TreeLstm&&) = default;

  const TreeLstmConfig& config() const noexcept { return config_; }
  std::size_t leaf_dim() const noexcept { return leaf_dim_; }
  const AffineMap& leaf() const noexcept { return leaf_; }

  const CellParams& cell(const std::string& op) const {
    auto it = cells_.find(op);
    if (it == cells_.end()) throw DataError("unknown operator label '" + op + "'");
    return it->second;
  }

  const DenseTensor& leaf_feature(const std::string& symbol) const {
    auto it = config_.leaf_features.find(symbol);
    if (it == config_.leaf_features.end()) throw DataError("unknown leaf symbol '" + symbol + "'");
    return it->second;
  }

  /// Visits every parameter: leaf map first, then operators in config order.
  template <typename F>
  void for_each_parameter(F&& f) {
    f(leaf_.weight);
    f(leaf_.bias);
    for (const auto& op : config_.operators) cells_.at(op).for_each_parameter(f);
  }
  template <typename F>
  void for_each_parameter(F&& f) const {
    f(leaf_.weight);
    f(leaf_.bias);
    for (const auto& op : config_.operators) cells_.at(op).for_each_parameter(f);
  }

 private:
  TreeLstmConfig config_;
  std::size_t leaf_dim_ = 0;
  AffineMap leaf_;
  std::map<std::string, CellParams> cells_;
};

/// h = logistic(W x + b); the leaf memory cell equals h.
inline NodeState leaf_state(const AffineMap& leaf, const DenseTensor& x, Tape& tape) {
  if (!x.is_vector() || x.size() != leaf.in_dim())
    throw DimensionError("leaf feature has shape " + shape_string(x.shape()) +
                         ", expected [" + std::to_string(leaf.in_dim()) + "]");
  Var h = tape.sigmoid(apply(tape, leaf, tape.constant(x)));
  return NodeState{h, h};
}

/**
 * One gated step over 1..L children. Missing child positions are padded with
 * zero hidden states for the gate aggregators and contribute no forget term.
 */
inline NodeState cell_step(const CellParams& p, std::span<const NodeState> children, Tape& tape,
                           UpdateActivation update_activation = UpdateActivation::Tanh) {
  const std::size_t L = p.input_gate.outdegree;
  const std::size_t c = p.input_gate.hidden;
  if (children.empty()) throw std::invalid_argument("cell_step needs at least one child");
  if (children.size() > L)
    throw DataError("node has " + std::to_string(children.size()) +
                    " children, outdegree is " + std::to_string(L));
  for (const auto& ch : children)
    if (tape.value(ch.h).size() != c || tape.value(ch.memory).size() != c)
      throw DimensionError("child state length does not match hidden size " +
                           std::to_string(c));

  std::vector<Var> hs;
  hs.reserve(L);
  for (const auto& ch : children) hs.push_back(ch.h);
  if (hs.size() < L) {
    Var zero = tape.constant(DenseTensor(Shape{c}));
    hs.resize(L, zero);
  }

  Var i = tape.sigmoid(aggregate(p.input_gate, hs, tape));
  Var o = tape.sigmoid(aggregate(p.output_gate, hs, tape));
  Var u_pre = aggregate(p.update, hs, tape);
  Var u = update_activation == UpdateActivation::Tanh ? tape.tanh(u_pre) : tape.sigmoid(u_pre);

  std::vector<Var> terms{tape.hadamard(i, u)};
  for (std::size_t j = 0; j < children.size(); ++j) {
    Var f = tape.sigmoid(apply(tape, p.forget[j], children[j].h));
    terms.push_back(tape.hadamard(f, children[j].memory));
  }
  Var memory = tape.add(terms);
  Var h = tape.hadamard(o, tape.tanh(memory));
  return NodeState{h, memory};
}

inline NodeState cell_step(const CellParams& p, const std::vector<NodeState>& children,
                           Tape& tape,
                           UpdateActivation update_activation = UpdateActivation::Tanh) {
  return cell_step(p, std::span<const NodeState>(children), tape, update_activation);
}

enum class ChildOrder { LeftToRight, RightToLeft };

/// Bottom-up encoding; returns the root state.
inline NodeState encode_tree(const TreeLstm& model, const Tree& tree, Tape& tape,
                             ChildOrder order = ChildOrder::LeftToRight) {
  if (tree.is_leaf()) return leaf_state(model.leaf(), model.leaf_feature(tree.label), tape);
  const CellParams& params = model.cell(tree.label);
  const std::size_t n = tree.children.size();
  if (n > model.config().outdegree)
    throw DataError("node '" + tree.label + "' has " + std::to_string(n) +
                    " children, outdegree is " + std::to_string(model.config().outdegree));
  std::vector<NodeState> states(n);
  if (order == ChildOrder::LeftToRight) {
    for (std::size_t j = 0; j < n; ++j) states[j] = encode_tree(model, tree.children[j], tape, order);
  } else {
    for (std::size_t j = n; j-- > 0;) states[j] = encode_tree(model, tree.children[j], tape, order);
  }
  return cell_step(params, states, tape, model.config().update_activation);
}

}  // namespace tensortree

#endif  // TENSORTREE_TREELSTM_HPP
