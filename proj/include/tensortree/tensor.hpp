#ifndef TENSORTREE_TENSOR_HPP
#define TENSORTREE_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tensortree {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes do not conform.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

/**
 * Row-major multi-way array of doubles.
 *
 * The order is always at least one; a default-constructed tensor is the
 * empty vector of shape [0].
 */
class DenseTensor {
 public:
  DenseTensor() : shape_{0} {}

  explicit DenseTensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(checked(shape_)), fill) {}

  DenseTensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    checked(shape_);
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
  }

  static DenseTensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return DenseTensor(Shape{n}, std::move(values));
  }

  static DenseTensor vector(std::initializer_list<double> values) {
    return vector(std::vector<double>(values));
  }

  static DenseTensor matrix(std::size_t rows, std::size_t cols,
                            std::vector<double> values) {
    return DenseTensor(Shape{rows, cols}, std::move(values));
  }

  static DenseTensor identity(std::size_t n) {
    DenseTensor out(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) out.data_[i * n + i] = 1.0;
    return out;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  double& at(std::size_t row, std::size_t col) {
    return data_[row * shape_[1] + col];
  }
  double at(std::size_t row, std::size_t col) const {
    return data_[row * shape_[1] + col];
  }

  bool is_vector() const noexcept { return shape_.size() == 1; }
  bool is_matrix() const noexcept { return shape_.size() == 2; }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  DenseTensor& operator+=(const DenseTensor& other) {
    require_same_shape(*this, other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  DenseTensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

  static void require_same_shape(const DenseTensor& a, const DenseTensor& b,
                                 const char* what) {
    if (a.shape_ != b.shape_)
      throw DimensionError(std::string(what) + ": shape mismatch " +
                           shape_string(a.shape_) + " vs " +
                           shape_string(b.shape_));
  }

 private:
  static const Shape& checked(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor order must be at least 1");
    return shape;
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_vector(const DenseTensor& t, const char* name) {
  if (!t.is_vector())
    throw DimensionError(std::string(name) + " must be a vector, got " +
                         shape_string(t.shape()));
}

// y += W x
inline void matvec(std::span<const double> w, std::size_t rows,
                   std::size_t cols, std::span<const double> x,
                   std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = w.data() + i * cols;
    double acc = 0.0;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * x[j];
    y[i] += acc;
  }
}

// y += W^T g
inline void matvec_transposed(std::span<const double> w, std::size_t rows,
                              std::size_t cols, std::span<const double> g,
                              std::span<double> y) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    const double* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) y[j] += row[j] * gi;
  }
}

// W += g x^T
inline void outer_accumulate(std::span<const double> g, std::span<const double> x,
                             std::span<double> w) {
  const std::size_t cols = x.size();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    double* row = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
  }
}

/// out[r] = sum_a v[a] * t[a * rest + r]; contracts the leading mode.
inline std::vector<double> contract_leading(std::span<const double> t,
                                            std::span<const double> v) {
  const std::size_t lead = v.size();
  const std::size_t rest = lead == 0 ? 0 : t.size() / lead;
  std::vector<double> out(rest, 0.0);
  for (std::size_t a = 0; a < lead; ++a) {
    const double va = v[a];
    if (va == 0.0) continue;
    const double* slice = t.data() + a * rest;
    for (std::size_t r = 0; r < rest; ++r) out[r] += va * slice[r];
  }
  return out;
}

/// out[a] = sum_b t[a * trail + b] * v[b]; contracts the trailing mode.
inline std::vector<double> contract_trailing(std::span<const double> t,
                                             std::span<const double> v) {
  const std::size_t trail = v.size();
  const std::size_t rest = trail == 0 ? 0 : t.size() / trail;
  std::vector<double> out(rest, 0.0);
  for (std::size_t a = 0; a < rest; ++a) {
    const double* slice = t.data() + a * trail;
    double acc = 0.0;
    for (std::size_t b = 0; b < trail; ++b) acc += slice[b] * v[b];
    out[a] = acc;
  }
  return out;
}

inline void check_multiaffine(const DenseTensor& t,
                              std::span<const DenseTensor* const> vs) {
  if (vs.empty()) throw DimensionError("contraction needs at least one vector");
  if (t.order() != vs.size() + 1)
    throw DimensionError("contraction arity mismatch: tensor " +
                         shape_string(t.shape()) + " with " +
                         std::to_string(vs.size()) + " vectors");
  for (std::size_t j = 0; j < vs.size(); ++j) {
    require_vector(*vs[j], "contraction operand");
    if (vs[j]->size() != t.dim(j))
      throw DimensionError("contraction mode " + std::to_string(j + 1) +
                           " size " + std::to_string(t.dim(j)) +
                           " does not match vector of length " +
                           std::to_string(vs[j]->size()));
  }
}

}  // namespace detail

/// Returns W x + b.
inline DenseTensor affine_apply(const DenseTensor& w, const DenseTensor& b,
                                const DenseTensor& x) {
  if (!w.is_matrix())
    throw DimensionError("affine weight W must be a matrix, got " +
                         shape_string(w.shape()));
  detail::require_vector(b, "affine bias b");
  detail::require_vector(x, "affine input x");
  if (w.dim(1) != x.size() || w.dim(0) != b.size())
    throw DimensionError("affine shape mismatch: W " + shape_string(w.shape()) +
                         ", b " + shape_string(b.shape()) + ", x " +
                         shape_string(x.shape()));
  DenseTensor y = b;
  detail::matvec(w.data(), w.dim(0), w.dim(1), x.data(), y.data());
  return y;
}

inline DenseTensor hadamard(const DenseTensor& a, const DenseTensor& b) {
  DenseTensor::require_same_shape(a, b, "hadamard");
  DenseTensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

/// Appends a trailing 1: [v; 1].
inline DenseTensor homogenize(const DenseTensor& v) {
  detail::require_vector(v, "homogenize operand");
  std::vector<double> out(v.storage());
  out.push_back(1.0);
  return DenseTensor::vector(std::move(out));
}

/**
 * Multilinear contraction of a (d1 x ... x dL x k) tensor with one vector per
 * leading mode:
 *
 *   out(k) = sum_{j1..jL} T(j1, ..., jL, k) v1(j1) ... vL(jL)
 */
inline DenseTensor contract_multiaffine(const DenseTensor& t,
                                        std::span<const DenseTensor* const> vs) {
  detail::check_multiaffine(t, vs);
  std::vector<double> cur = detail::contract_leading(t.data(), vs[0]->data());
  for (std::size_t j = 1; j < vs.size(); ++j)
    cur = detail::contract_leading(cur, vs[j]->data());
  return DenseTensor::vector(std::move(cur));
}

inline DenseTensor contract_multiaffine(const DenseTensor& t,
                                        const std::vector<DenseTensor>& vs) {
  std::vector<const DenseTensor*> ptrs;
  ptrs.reserve(vs.size());
  for (const auto& v : vs) ptrs.push_back(&v);
  return contract_multiaffine(t, std::span<const DenseTensor* const>(ptrs));
}

}  // namespace tensortree

#endif  // TENSORTREE_TENSOR_HPP
