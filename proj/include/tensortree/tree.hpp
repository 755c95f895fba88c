#ifndef TENSORTREE_TREE_HPP
#define TENSORTREE_TREE_HPP

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tensortree {

/// Malformed text input. `line()` is 1-based, or 0 when unknown.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Ordered labelled tree; leaves carry leaf symbols, internal nodes operators.
struct Tree {
  std::string label;
  std::vector<Tree> children;

  Tree() = default;
  explicit Tree(std::string l, std::vector<Tree> c = {})
      : label(std::move(l)), children(std::move(c)) {}

  bool is_leaf() const noexcept { return children.empty(); }

  friend bool operator==(const Tree&, const Tree&) = default;
};

/// Leaf height is 0.
inline std::size_t height(const Tree& t) {
  std::size_t h = 0;
  for (const auto& c : t.children) h = std::max(h, height(c) + 1);
  return h;
}

inline std::size_t node_count(const Tree& t) {
  std::size_t n = 1;
  for (const auto& c : t.children) n += node_count(c);
  return n;
}

inline std::size_t max_outdegree(const Tree& t) {
  std::size_t d = t.children.size();
  for (const auto& c : t.children) d = std::max(d, max_outdegree(c));
  return d;
}

namespace detail {

inline void serialize_into(const Tree& t, std::string& out) {
  if (t.is_leaf()) {
    out += t.label;
    return;
  }
  out += '(';
  out += t.label;
  for (const auto& c : t.children) {
    out += ' ';
    serialize_into(c, out);
  }
  out += ')';
}

class SexprReader {
 public:
  explicit SexprReader(std::string_view text) : text_(text) {}

  Tree read_all() {
    Tree t = read();
    skip_space();
    if (pos_ != text_.size()) fail("trailing input");
    return t;
  }

 private:
  Tree read() {
    skip_space();
    if (pos_ >= text_.size()) fail("unexpected end of input");
    if (text_[pos_] == ')') fail("unexpected ')'");
    if (text_[pos_] != '(') return Tree(atom());
    ++pos_;
    skip_space();
    if (pos_ >= text_.size() || text_[pos_] == '(' || text_[pos_] == ')')
      fail("expected operator after '('");
    Tree node(atom());
    for (;;) {
      skip_space();
      if (pos_ >= text_.size()) fail("unbalanced '('");
      if (text_[pos_] == ')') {
        ++pos_;
        break;
      }
      node.children.push_back(read());
    }
    if (node.children.empty()) fail("operator '" + node.label + "' has no operands");
    return node;
  }

  std::string atom() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
           text_[pos_] != '(' && text_[pos_] != ')')
      ++pos_;
    if (pos_ == start) fail("expected symbol");
    return std::string(text_.substr(start, pos_ - start));
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("s-expression: " + what + " at offset " + std::to_string(pos_));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// "(IMPLY (AND 1 0) 1 0)"; a leaf is its bare label.
inline std::string serialize_tree(const Tree& t) {
  std::string out;
  detail::serialize_into(t, out);
  return out;
}

inline Tree deserialize_tree(std::string_view text) {
  return detail::SexprReader(text).read_all();
}

}  // namespace tensortree

#endif  // TENSORTREE_TREE_HPP
