#ifndef TENSORTREE_DATASETS_HPP
#define TENSORTREE_DATASETS_HPP

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tensortree/io.hpp"
#include "tensortree/rng.hpp"
#include "tensortree/tensor.hpp"
#include "tensortree/tree.hpp"

namespace tensortree {

/// A tree whose structure or symbols violate the task's grammar.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Task { Boolean, ListOps };

inline std::string_view to_string(Task task) {
  return task == Task::Boolean ? "bool" : "listops";
}

inline std::optional<Task> parse_task(std::string_view name) {
  if (name == "bool") return Task::Boolean;
  if (name == "listops") return Task::ListOps;
  return std::nullopt;
}

inline std::size_t num_classes(Task task) { return task == Task::Boolean ? 2 : 10; }

struct Sample {
  Tree tree;
  std::size_t label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetSplit {
  std::vector<Sample> train, valid, test;
  Task task = Task::Boolean;
  std::size_t outdegree = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
};

// ---------------------------------------------------------------------------
// Boolean sentences

inline const std::array<std::string, 3> kBooleanOperators = {"AND", "OR", "IMPLY"};

namespace detail {

inline bool apply_boolean(const std::string& op, bool a, bool b) {
  if (op == "AND") return a && b;
  if (op == "OR") return a || b;
  if (op == "IMPLY") return !a || b;
  throw DataError("unknown boolean operator '" + op + "'");
}

inline bool eval_boolean_node(const Tree& t, std::optional<std::size_t> arity) {
  if (t.is_leaf()) {
    if (t.label == "0") return false;
    if (t.label == "1") return true;
    throw DataError("invalid boolean leaf '" + t.label + "'");
  }
  if (arity && t.children.size() != *arity)
    throw DataError("operator '" + t.label + "' has " + std::to_string(t.children.size()) +
                    " operands, expected " + std::to_string(*arity));
  if (t.children.size() < 2)
    throw DataError("operator '" + t.label + "' needs at least two operands");
  bool acc = eval_boolean_node(t.children[0], arity);
  for (std::size_t i = 1; i < t.children.size(); ++i)
    acc = apply_boolean(t.label, acc, eval_boolean_node(t.children[i], arity));
  return acc;
}

}  // namespace detail

/// Left fold of each operator over its operands; IMPLY(a, b) = !a || b.
/// When `arity` is given every operator must have exactly that many operands.
inline std::size_t eval_boolean(const Tree& t, std::optional<std::size_t> arity = std::nullopt) {
  return detail::eval_boolean_node(t, arity) ? 1 : 0;
}

inline DenseTensor encode_boolean_leaf(std::size_t value) {
  if (value > 1) throw std::out_of_range("boolean leaf value must be 0 or 1");
  return value == 0 ? DenseTensor::vector({1.0, 0.0}) : DenseTensor::vector({0.0, 1.0});
}

inline std::size_t decode_boolean_leaf(const DenseTensor& x) {
  if (x.size() != 2 || x[0] + x[1] != 1.0 || (x[0] != 0.0 && x[0] != 1.0))
    throw DataError("not a boolean one-hot vector");
  return x[1] == 1.0 ? 1 : 0;
}

struct BooleanGenConfig {
  std::size_t outdegree = 2;
  std::array<std::size_t, 3> counts = {7000, 1000, 2000};
  std::size_t min_height = 4;
  std::size_t max_height = 8;
  /// Chance that an off-spine operand is itself an operator; <0 selects 1/(2L).
  double subtree_operator_prob = -1.0;
};

namespace detail {

inline Tree random_boolean_leaf(Rng& rng) { return Tree(rng.bernoulli(0.5) ? "1" : "0"); }

inline const std::string& random_boolean_op(Rng& rng) {
  return kBooleanOperators[rng.below(kBooleanOperators.size())];
}

inline Tree random_boolean_subtree(Rng& rng, std::size_t L, std::size_t cap, double p_op) {
  if (cap == 0 || !rng.bernoulli(p_op)) return random_boolean_leaf(rng);
  Tree node(random_boolean_op(rng));
  for (std::size_t j = 0; j < L; ++j)
    node.children.push_back(random_boolean_subtree(rng, L, cap - 1, p_op));
  return node;
}

// One operand of every spine node continues the spine, so the height is exact.
inline Tree random_boolean_spine(Rng& rng, std::size_t L, std::size_t h, double p_op) {
  if (h == 0) return random_boolean_leaf(rng);
  Tree node(random_boolean_op(rng));
  const std::size_t spine = rng.below(L);
  for (std::size_t j = 0; j < L; ++j)
    node.children.push_back(j == spine ? random_boolean_spine(rng, L, h - 1, p_op)
                                       : random_boolean_subtree(rng, L, h - 1, p_op));
  return node;
}

}  // namespace detail

/// One random L-ary boolean tree of exactly `h` levels.
inline Tree random_boolean_tree(Rng& rng, std::size_t L, std::size_t h, double p_op) {
  return detail::random_boolean_spine(rng, L, h, p_op);
}

/**
 * Boolean-sentence dataset. Each split is filled by rejection so that neither
 * class exceeds half of it (rounded up); trees are unique across splits.
 */
inline DatasetSplit gen_boolean_dataset(const BooleanGenConfig& cfg, std::uint64_t seed) {
  if (cfg.outdegree < 2 || cfg.outdegree > 5)
    throw std::invalid_argument("boolean outdegree must be in 2..5");
  if (cfg.min_height < 1 || cfg.min_height > cfg.max_height)
    throw std::invalid_argument("invalid boolean height range");
  const std::size_t L = cfg.outdegree;
  const double p_op = cfg.subtree_operator_prob < 0.0 ? 1.0 / (2.0 * static_cast<double>(L))
                                                      : cfg.subtree_operator_prob;
  DatasetSplit out;
  out.task = Task::Boolean;
  out.outdegree = L;
  out.seed = seed;

  Rng root(seed);
  std::unordered_set<std::string> seen;
  std::vector<Sample>* splits[] = {&out.train, &out.valid, &out.test};
  for (std::size_t s = 0; s < 3; ++s) {
    Rng rng = root.split(s);
    const std::size_t n = cfg.counts[s];
    const std::size_t cap = (n + 1) / 2;
    std::size_t per_class[2] = {0, 0};
    auto& dst = *splits[s];
    dst.reserve(n);
    while (dst.size() < n) {
      const auto h = static_cast<std::size_t>(
          rng.between(static_cast<std::int64_t>(cfg.min_height),
                      static_cast<std::int64_t>(cfg.max_height)));
      Tree t = random_boolean_tree(rng, L, h, p_op);
      const std::size_t label = eval_boolean(t, L);
      if (per_class[label] >= cap) continue;
      if (!seen.insert(serialize_tree(t)).second) continue;
      ++per_class[label];
      dst.push_back(Sample{std::move(t), label});
    }
  }

  out.metadata = {
      {"task", "bool"},
      {"outdegree", std::to_string(L)},
      {"seed", std::to_string(seed)},
      {"counts", std::to_string(cfg.counts[0]) + "," + std::to_string(cfg.counts[1]) + "," +
                     std::to_string(cfg.counts[2])},
      {"heights", std::to_string(cfg.min_height) + "," + std::to_string(cfg.max_height)},
      {"subtree_operator_prob", std::to_string(p_op)}};
  return out;
}

// ---------------------------------------------------------------------------
// ListOps

inline const std::array<std::string, 4> kListOpsOperators = {"MAX", "MIN", "MED", "SM"};
inline constexpr std::size_t kListOpsMinArity = 2;
inline constexpr std::size_t kListOpsMaxArity = 5;

inline bool is_listops_operator(std::string_view op) {
  return std::find(kListOpsOperators.begin(), kListOpsOperators.end(), op) !=
         kListOpsOperators.end();
}

/// MAX, MIN, lower median (MED), and sum modulo 10 (SM).
inline std::size_t eval_listops(const Tree& t) {
  if (t.is_leaf()) {
    if (t.label.size() != 1 || !std::isdigit(static_cast<unsigned char>(t.label[0])))
      throw DataError("invalid ListOps digit '" + t.label + "'");
    return static_cast<std::size_t>(t.label[0] - '0');
  }
  std::vector<std::size_t> vals;
  for (const auto& c : t.children) vals.push_back(eval_listops(c));
  if (t.label == "MAX") return *std::max_element(vals.begin(), vals.end());
  if (t.label == "MIN") return *std::min_element(vals.begin(), vals.end());
  if (t.label == "SM") {
    std::size_t s = 0;
    for (auto v : vals) s += v;
    return s % 10;
  }
  if (t.label == "MED") {
    std::sort(vals.begin(), vals.end());
    return vals[(vals.size() - 1) / 2];
  }
  throw DataError("unknown ListOps operator '" + t.label + "'");
}

/// x[i] = 1 for i <= k, else 0; length 10.
inline DenseTensor encode_digit(std::size_t k) {
  if (k > 9) throw std::out_of_range("digit must be in 0..9, got " + std::to_string(k));
  DenseTensor x(Shape{10});
  for (std::size_t i = 0; i <= k; ++i) x[i] = 1.0;
  return x;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline std::size_t parse_label_field(std::string_view field, std::size_t classes,
                                     std::size_t line) {
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.front())))
    field.remove_prefix(1);
  while (!field.empty() && std::isspace(static_cast<unsigned char>(field.back())))
    field.remove_suffix(1);
  if (field.empty() || !std::all_of(field.begin(), field.end(), [](char ch) {
        return std::isdigit(static_cast<unsigned char>(ch));
      }))
    throw ParseError("non-digit label '" + std::string(field) + "'", line);
  const std::size_t v = std::stoul(std::string(field));
  if (v >= classes)
    throw ParseError("label " + std::to_string(v) + " out of range", line);
  return v;
}

}  // namespace detail

/**
 * Parses one "label<TAB>sequence" line of bracketed prefix tokens, e.g.
 * "9\t[MAX 2 9 [MIN 4 7 ] 0 ]". Operators open with "[OP" or "(OP" and close
 * with "]" or ")" respectively. Bare "(" grouping tokens, as found in
 * binarized distributions, are skipped together with their ")".
 */
inline Sample parse_listops(std::string_view line, std::size_t line_no = 0) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw ParseError("missing TAB separator", line_no);
  Sample out;
  out.label = detail::parse_label_field(line.substr(0, tab), 10, line_no);

  struct Open {
    Tree node;
    char close;
  };
  std::vector<Open> stack;
  std::size_t bare_parens = 0;
  std::optional<Tree> root;

  auto emit = [&](Tree t) {
    if (stack.empty()) {
      if (root) throw ParseError("more than one top-level expression", line_no);
      root = std::move(t);
    } else {
      stack.back().node.children.push_back(std::move(t));
    }
  };

  for (std::string_view tok : detail::split_ws(line.substr(tab + 1))) {
    if (tok == "(") {
      ++bare_parens;
    } else if (tok == "]" || tok == ")") {
      const char close = tok[0];
      if (close == ')' && bare_parens > 0) {
        --bare_parens;
        continue;
      }
      if (stack.empty() || stack.back().close != close)
        throw ParseError("unbalanced '" + std::string(tok) + "'", line_no);
      Tree node = std::move(stack.back().node);
      stack.pop_back();
      const std::size_t arity = node.children.size();
      if (arity < kListOpsMinArity || arity > kListOpsMaxArity)
        throw ParseError("operator " + node.label + " has arity " + std::to_string(arity) +
                             ", expected 2..5",
                         line_no);
      emit(std::move(node));
    } else if ((tok[0] == '[' || tok[0] == '(') && is_listops_operator(tok.substr(1))) {
      stack.push_back(Open{Tree(std::string(tok.substr(1))), tok[0] == '[' ? ']' : ')'});
    } else if (tok.size() == 1 && std::isdigit(static_cast<unsigned char>(tok[0]))) {
      emit(Tree(std::string(tok)));
    } else {
      throw ParseError("unknown token '" + std::string(tok) + "'", line_no);
    }
  }
  if (!stack.empty() || bare_parens != 0) throw ParseError("unbalanced brackets", line_no);
  if (!root) throw ParseError("empty sequence", line_no);
  out.tree = std::move(*root);
  return out;
}

/// Bracketed prefix form accepted by parse_listops.
inline std::string serialize_listops(const Tree& t) {
  if (t.is_leaf()) return t.label;
  std::string out = "[" + t.label;
  for (const auto& c : t.children) out += " " + serialize_listops(c);
  out += " ]";
  return out;
}

struct ListOpsGenConfig {
  std::size_t max_depth = 4;
  double operator_prob = 0.25;
};

inline Tree random_listops_tree(Rng& rng, const ListOpsGenConfig& cfg, std::size_t depth = 1) {
  Tree node(kListOpsOperators[rng.below(kListOpsOperators.size())]);
  const auto arity = static_cast<std::size_t>(rng.between(
      static_cast<std::int64_t>(kListOpsMinArity), static_cast<std::int64_t>(kListOpsMaxArity)));
  for (std::size_t j = 0; j < arity; ++j) {
    if (depth < cfg.max_depth && rng.bernoulli(cfg.operator_prob))
      node.children.push_back(random_listops_tree(rng, cfg, depth + 1));
    else
      node.children.push_back(Tree(std::string(1, static_cast<char>('0' + rng.below(10)))));
  }
  return node;
}

/// Synthetic ListOps samples labelled by eval_listops.
inline std::vector<Sample> gen_listops_samples(Rng& rng, std::size_t count,
                                               const ListOpsGenConfig& cfg = {}) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tree t = random_listops_tree(rng, cfg);
    const std::size_t label = eval_listops(t);
    out.push_back(Sample{std::move(t), label});
  }
  return out;
}

/// Number of validation samples carved out of `n` training samples (9%, rounded).
inline std::size_t listops_valid_count(std::size_t n) { return (n * 9 + 50) / 100; }

/// Moves a uniform 9% sample (without replacement) of `train` into valid.
inline void carve_validation(std::vector<Sample>& train, std::vector<Sample>& valid, Rng& rng) {
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_valid = listops_valid_count(train.size());
  std::vector<bool> is_valid(train.size(), false);
  for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = true;
  std::vector<Sample> kept;
  kept.reserve(train.size() - n_valid);
  for (std::size_t i = 0; i < train.size(); ++i)
    (is_valid[i] ? valid : kept).push_back(std::move(train[i]));
  train = std::move(kept);
}

// ---------------------------------------------------------------------------
// Files

inline Sample parse_sample(std::string_view line, Task task, std::size_t line_no = 0) {
  if (task == Task::ListOps) return parse_listops(line, line_no);
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos) throw ParseError("missing TAB separator", line_no);
  Sample s;
  s.label = detail::parse_label_field(line.substr(0, tab), 2, line_no);
  try {
    s.tree = deserialize_tree(line.substr(tab + 1));
  } catch (const ParseError& e) {
    throw ParseError(e.what(), line_no);
  }
  return s;
}

inline std::string format_sample(const Sample& s, Task task) {
  return std::to_string(s.label) + "\t" +
         (task == Task::ListOps ? serialize_listops(s.tree) : serialize_tree(s.tree));
}

/// Reads a "label<TAB>tree" file; blank lines are skipped.
inline std::vector<Sample> read_samples(const std::filesystem::path& path, Task task) {
  std::vector<Sample> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(parse_sample(lines[i], task, i + 1));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ": " + e.what(), e.line());
    }
  }
  return out;
}

inline void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples,
                          Task task) {
  std::string content;
  for (const auto& s : samples) {
    content += format_sample(s, task);
    content += '\n';
  }
  atomic_write(path, content);
}

inline void write_metadata(const std::filesystem::path& path,
                           const std::map<std::string, std::string>& meta) {
  std::string content;
  for (const auto& [k, v] : meta) content += k + "=" + v + "\n";
  atomic_write(path, content);
}

inline std::map<std::string, std::string> read_metadata(const std::filesystem::path& path) {
  std::map<std::string, std::string> meta;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto eq = lines[i].find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", i + 1);
    meta[lines[i].substr(0, eq)] = lines[i].substr(eq + 1);
  }
  return meta;
}

/// Writes train.txt, valid.txt, test.txt and metadata.txt into `dir`.
inline void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_samples(dir / "train.txt", split.train, split.task);
  write_samples(dir / "valid.txt", split.valid, split.task);
  write_samples(dir / "test.txt", split.test, split.task);
  write_metadata(dir / "metadata.txt", split.metadata);
}

/**
 * ListOps split: the test file is taken whole; a seeded uniform 9% of the
 * training lines becomes the validation set.
 */
inline DatasetSplit split_listops(const std::filesystem::path& train_file,
                                  const std::filesystem::path& test_file, Rng& rng) {
  DatasetSplit out;
  out.task = Task::ListOps;
  out.outdegree = kListOpsMaxArity;
  out.seed = rng.seed();
  out.train = read_samples(train_file, Task::ListOps);
  out.test = read_samples(test_file, Task::ListOps);
  carve_validation(out.train, out.valid, rng);
  return out;
}

/**
 * Loads a dataset directory. Boolean directories need metadata.txt and all
 * three split files; ListOps directories need train.txt and test.txt, with
 * valid.txt optional (carved from train with `seed` when absent).
 */
inline DatasetSplit load_dataset(const std::filesystem::path& dir, Task task,
                                 std::uint64_t seed = 0) {
  if (task == Task::ListOps && !std::filesystem::exists(dir / "valid.txt")) {
    Rng rng(seed);
    return split_listops(dir / "train.txt", dir / "test.txt", rng);
  }
  DatasetSplit out;
  out.task = task;
  out.seed = seed;
  out.train = read_samples(dir / "train.txt", task);
  out.valid = read_samples(dir / "valid.txt", task);
  out.test = read_samples(dir / "test.txt", task);
  if (task == Task::Boolean) {
    out.metadata = read_metadata(dir / "metadata.txt");
    auto it = out.metadata.find("outdegree");
    if (it == out.metadata.end()) throw DataError("metadata.txt lacks 'outdegree'");
    out.outdegree = std::stoul(it->second);
  } else {
    out.outdegree = kListOpsMaxArity;
    if (std::filesystem::exists(dir / "metadata.txt"))
      out.metadata = read_metadata(dir / "metadata.txt");
  }
  return out;
}

}  // namespace tensortree

#endif  // TENSORTREE_DATASETS_HPP
