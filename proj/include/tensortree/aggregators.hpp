#ifndef TENSORTREE_AGGREGATORS_HPP
#define TENSORTREE_AGGREGATORS_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tensortree/autodiff.hpp"
#include "tensortree/init.hpp"
#include "tensortree/rng.hpp"
#include "tensortree/tensor.hpp"

namespace tensortree {

enum class AggregatorKind { Sum, Full, Hosvd, Canonical, TT };

inline constexpr AggregatorKind kAllAggregatorKinds[] = {
    AggregatorKind::Sum, AggregatorKind::Full, AggregatorKind::Hosvd,
    AggregatorKind::Canonical, AggregatorKind::TT};

inline std::string_view to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::Sum: return "sum";
    case AggregatorKind::Full: return "full";
    case AggregatorKind::Hosvd: return "hosvd";
    case AggregatorKind::Canonical: return "canonical";
    case AggregatorKind::TT: return "tt";
  }
  return "?";
}

inline std::optional<AggregatorKind> parse_aggregator_kind(std::string_view name) {
  for (AggregatorKind k : kAllAggregatorKinds)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

/// True for the decomposed kinds, which need a rank.
constexpr bool uses_rank(AggregatorKind kind) {
  return kind == AggregatorKind::Hosvd || kind == AggregatorKind::Canonical ||
         kind == AggregatorKind::TT;
}

/// x -> W x + b with W of shape [out x in].
struct AffineMap {
  Parameter weight;
  Parameter bias;

  std::size_t in_dim() const { return weight.value.dim(1); }
  std::size_t out_dim() const { return weight.value.dim(0); }
};

inline AffineMap make_affine(const std::string& name, std::size_t out,
                             std::size_t in, Rng& rng) {
  return AffineMap{Parameter{name + "/weight", kaiming_normal(rng, {out, in}, in)},
                   Parameter{name + "/bias", DenseTensor(Shape{out})}};
}

inline Var apply(Tape& tape, const AffineMap& map, Var x) {
  return tape.affine(tape.param(map.weight), x, tape.param(map.bias));
}

struct SumWeights {
  std::vector<Parameter> maps;  // U_j, c x c
  Parameter bias;
};

struct FullWeights {
  Parameter tensor;  // (c+1)^L x c
};

struct HosvdWeights {
  std::vector<AffineMap> factors;  // c -> r
  Parameter core;                  // (r+1)^L x r
  AffineMap output;                // r -> c
};

struct CanonicalWeights {
  std::vector<AffineMap> factors;  // c -> r
  AffineMap output;                // r -> c
};

struct TtWeights {
  AffineMap first;               // c -> r
  std::vector<Parameter> cores;  // (c+1) x (r+1) x r, children 2..L
  AffineMap output;              // r -> c
};

/// Parameters of one aggregation function f(h_1, ..., h_L) -> R^c.
struct AggregatorParams {
  AggregatorKind kind = AggregatorKind::Sum;
  std::size_t hidden = 0;
  std::size_t outdegree = 0;
  std::size_t rank = 0;
  std::variant<SumWeights, FullWeights, HosvdWeights, CanonicalWeights, TtWeights>
      weights;

  template <typename F>
  void for_each_parameter(F&& f) {
    visit_parameters(*this, f);
  }

  template <typename F>
  void for_each_parameter(F&& f) const {
    visit_parameters(*this, f);
  }

  /// Number of scalars actually allocated.
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for_each_parameter([&](const Parameter& p) { n += p.value.size(); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit_parameters(Self& self, F& f) {
    auto affine = [&](auto& m) {
      f(m.weight);
      f(m.bias);
    };
    std::visit(
        [&](auto& w) {
          using W = std::decay_t<decltype(w)>;
          if constexpr (std::is_same_v<W, SumWeights>) {
            for (auto& u : w.maps) f(u);
            f(w.bias);
          } else if constexpr (std::is_same_v<W, FullWeights>) {
            f(w.tensor);
          } else if constexpr (std::is_same_v<W, HosvdWeights>) {
            for (auto& u : w.factors) affine(u);
            f(w.core);
            affine(w.output);
          } else if constexpr (std::is_same_v<W, CanonicalWeights>) {
            for (auto& u : w.factors) affine(u);
            affine(w.output);
          } else {
            affine(w.first);
            for (auto& core : w.cores) f(core);
            affine(w.output);
          }
        },
        self.weights);
  }
};

namespace detail {

inline std::uint64_t ipow(std::uint64_t base, std::size_t exp) {
  std::uint64_t out = 1;
  for (std::size_t i = 0; i < exp; ++i) out *= base;
  return out;
}

inline constexpr std::uint64_t kMaxAggregatorScalars = 50'000'000;

}  // namespace detail

/// Exact number of scalars in one aggregation function.
inline std::uint64_t param_count(AggregatorKind kind, std::size_t c,
                                 std::size_t L, std::size_t r = 0) {
  using detail::ipow;
  switch (kind) {
    case AggregatorKind::Sum: return L * c * c + c;
    case AggregatorKind::Full: return c * ipow(c + 1, L);
    case AggregatorKind::Hosvd:
      return L * r * (c + 1) + r * ipow(r + 1, L) + c * (r + 1);
    case AggregatorKind::Canonical: return L * r * (c + 1) + c * (r + 1);
    case AggregatorKind::TT:
      return r * (c + 1) + (L - 1) * r * (c + 1) * (r + 1) + c * (r + 1);
  }
  return 0;
}

/**
 * Builds an aggregation function with Kaiming-normal weights and zero biases.
 * The fan-in of a multi-affine tensor is the product of its contracted
 * (augmented) input modes. `prefix` is prepended to every parameter name.
 */
inline AggregatorParams new_aggregator(AggregatorKind kind, std::size_t c,
                                       std::size_t L, std::optional<std::size_t> r,
                                       Rng& rng, const std::string& prefix = "") {
  if (c == 0 || L == 0)
    throw std::invalid_argument("aggregator hidden size and outdegree must be positive");
  if (uses_rank(kind) && (!r || *r == 0))
    throw std::invalid_argument(std::string("aggregator '") +
                                std::string(to_string(kind)) +
                                "' requires a positive rank");
  const std::size_t rank = uses_rank(kind) ? *r : 0;
  if (param_count(kind, c, L, rank) > detail::kMaxAggregatorScalars)
    throw std::length_error("aggregator '" + std::string(to_string(kind)) +
                            "' would allocate " +
                            std::to_string(param_count(kind, c, L, rank)) +
                            " scalars");

  AggregatorParams p;
  p.kind = kind;
  p.hidden = c;
  p.outdegree = L;
  p.rank = rank;
  auto name = [&](const std::string& s) { return prefix + s; };
  auto child = [&](std::size_t j) { return name("u" + std::to_string(j + 1)); };

  switch (kind) {
    case AggregatorKind::Sum: {
      SumWeights w;
      for (std::size_t j = 0; j < L; ++j)
        w.maps.push_back(Parameter{child(j) + "/weight", kaiming_normal(rng, {c, c}, c)});
      w.bias = Parameter{name("bias"), DenseTensor(Shape{c})};
      p.weights = std::move(w);
      break;
    }
    case AggregatorKind::Full: {
      Shape shape(L, c + 1);
      shape.push_back(c);
      p.weights = FullWeights{Parameter{
          name("tensor"), kaiming_normal(rng, shape, detail::ipow(c + 1, L))}};
      break;
    }
    case AggregatorKind::Hosvd: {
      HosvdWeights w;
      for (std::size_t j = 0; j < L; ++j) w.factors.push_back(make_affine(child(j), rank, c, rng));
      Shape shape(L, rank + 1);
      shape.push_back(rank);
      w.core = Parameter{name("core"), kaiming_normal(rng, shape, detail::ipow(rank + 1, L))};
      w.output = make_affine(name("q"), c, rank, rng);
      p.weights = std::move(w);
      break;
    }
    case AggregatorKind::Canonical: {
      CanonicalWeights w;
      for (std::size_t j = 0; j < L; ++j) w.factors.push_back(make_affine(child(j), rank, c, rng));
      w.output = make_affine(name("q"), c, rank, rng);
      p.weights = std::move(w);
      break;
    }
    case AggregatorKind::TT: {
      TtWeights w;
      w.first = make_affine(child(0), rank, c, rng);
      for (std::size_t j = 1; j < L; ++j)
        w.cores.push_back(Parameter{
            name("core" + std::to_string(j + 1)),
            kaiming_normal(rng, {c + 1, rank + 1, rank}, (c + 1) * (rank + 1))});
      w.output = make_affine(name("q"), c, rank, rng);
      p.weights = std::move(w);
      break;
    }
  }
  return p;
}

/// Records f(h_1, ..., h_L) on the tape; `hs` must hold exactly L vectors of length c.
inline Var aggregate(const AggregatorParams& p, std::span<const Var> hs, Tape& tape) {
  if (hs.size() != p.outdegree)
    throw DimensionError("aggregate expects " + std::to_string(p.outdegree) +
                         " child states, got " + std::to_string(hs.size()));
  for (Var h : hs) {
    const DenseTensor& v = tape.value(h);
    if (!v.is_vector() || v.size() != p.hidden)
      throw DimensionError("aggregate child state has shape " +
                           shape_string(v.shape()) + ", expected [" +
                           std::to_string(p.hidden) + "]");
  }

  return std::visit(
      [&](const auto& w) -> Var {
        using W = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<W, SumWeights>) {
          std::vector<Var> terms;
          terms.reserve(hs.size() + 1);
          for (std::size_t j = 0; j < hs.size(); ++j)
            terms.push_back(tape.affine(tape.param(w.maps[j]), hs[j]));
          terms.push_back(tape.param(w.bias));
          return tape.add(terms);
        } else if constexpr (std::is_same_v<W, FullWeights>) {
          std::vector<Var> aug;
          for (Var h : hs) aug.push_back(tape.homogenize(h));
          return tape.contract(tape.param(w.tensor), aug);
        } else if constexpr (std::is_same_v<W, HosvdWeights>) {
          std::vector<Var> aug;
          for (std::size_t j = 0; j < hs.size(); ++j)
            aug.push_back(tape.homogenize(apply(tape, w.factors[j], hs[j])));
          return apply(tape, w.output, tape.contract(tape.param(w.core), aug));
        } else if constexpr (std::is_same_v<W, CanonicalWeights>) {
          Var prod = apply(tape, w.factors[0], hs[0]);
          for (std::size_t j = 1; j < hs.size(); ++j)
            prod = tape.hadamard(prod, apply(tape, w.factors[j], hs[j]));
          return apply(tape, w.output, prod);
        } else {
          Var state = apply(tape, w.first, hs[0]);
          for (std::size_t j = 1; j < hs.size(); ++j) {
            const Var modes[] = {tape.homogenize(hs[j]), tape.homogenize(state)};
            state = tape.contract(tape.param(w.cores[j - 1]), modes);
          }
          return apply(tape, w.output, state);
        }
      },
      p.weights);
}

inline Var aggregate(const AggregatorParams& p, const std::vector<Var>& hs, Tape& tape) {
  return aggregate(p, std::span<const Var>(hs), tape);
}

/// Evaluates f on plain vectors, through a throwaway tape.
inline DenseTensor aggregate_value(const AggregatorParams& p,
                                   const std::vector<DenseTensor>& hs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& h : hs) vars.push_back(tape.constant(h));
  return tape.value(aggregate(p, vars, tape));
}

namespace detail {

/// Y(.., n, ..) = sum_o M(n, o) X(.., o, ..) along `mode`.
inline DenseTensor mode_product(const DenseTensor& x, std::size_t mode,
                                const DenseTensor& m) {
  const Shape& s = x.shape();
  const std::size_t old_dim = s[mode];
  const std::size_t new_dim = m.dim(0);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < mode; ++i) outer *= s[i];
  for (std::size_t i = mode + 1; i < s.size(); ++i) inner *= s[i];
  Shape ys = s;
  ys[mode] = new_dim;
  DenseTensor y(ys);
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t n = 0; n < new_dim; ++n)
      for (std::size_t o = 0; o < old_dim; ++o) {
        const double c = m.at(n, o);
        if (c == 0.0) continue;
        const double* src = x.storage().data() + (a * old_dim + o) * inner;
        double* dst = y.storage().data() + (a * new_dim + n) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += c * src[i];
      }
  return y;
}

/// [[W b]; [0 1]], so that homogenize(W h + b) = A [h; 1].
inline DenseTensor augmented_affine(const AffineMap& map) {
  const std::size_t out = map.out_dim(), in = map.in_dim();
  DenseTensor a(Shape{out + 1, in + 1});
  for (std::size_t i = 0; i < out; ++i) {
    for (std::size_t j = 0; j < in; ++j) a.at(i, j) = map.weight.value.at(i, j);
    a.at(i, in) = map.bias.value[i];
  }
  a.at(out, in) = 1.0;
  return a;
}

inline DenseTensor transpose(const DenseTensor& m) {
  DenseTensor t(Shape{m.dim(1), m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) t.at(j, i) = m.at(i, j);
  return t;
}

/// Flat offset of a multi-index in a row-major shape.
inline std::size_t flat_index(const Shape& shape, const std::vector<std::size_t>& idx) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) off = off * shape[i] + idx[i];
  return off;
}

/// Core over augmented rank modes plus output-affine folding:
/// C(a.., k) = sum_s inner(a.., s) Wq(k, s) + bq(k) [all a = r].
inline DenseTensor fold_output(const DenseTensor& inner, const AffineMap& q,
                               std::size_t modes, std::size_t r) {
  const std::size_t c = q.out_dim();
  Shape shape(modes, r + 1);
  shape.push_back(c);
  DenseTensor core(shape);
  const std::size_t rows = inner.size() / r;
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = 0.0;
      for (std::size_t s = 0; s < r; ++s) acc += inner[a * r + s] * q.weight.value.at(k, s);
      core[a * c + k] = acc;
    }
  std::vector<std::size_t> last(modes, r);
  last.push_back(0);
  const std::size_t base = flat_index(shape, last);
  for (std::size_t k = 0; k < c; ++k) core[base + k] += q.bias.value[k];
  return core;
}

}  // namespace detail

/**
 * Dense (c+1)^L x c tensor T such that aggregate(p, hs) equals
 * contract_multiaffine(T, [h_1; 1], ..., [h_L; 1]) for every input.
 */
inline DenseTensor reconstruct_full(const AggregatorParams& p,
                                    std::uint64_t max_scalars = 1'000'000) {
  const std::size_t c = p.hidden, L = p.outdegree, r = p.rank;
  const std::uint64_t total = c * detail::ipow(c + 1, L);
  if (total > max_scalars)
    throw std::length_error("reconstruct_full: " + std::to_string(total) +
                            " scalars exceeds guard of " + std::to_string(max_scalars));
  Shape full_shape(L, c + 1);
  full_shape.push_back(c);

  return std::visit(
      [&](const auto& w) -> DenseTensor {
        using W = std::decay_t<decltype(w)>;
        if constexpr (std::is_same_v<W, FullWeights>) {
          return w.tensor.value;
        } else if constexpr (std::is_same_v<W, SumWeights>) {
          DenseTensor out(full_shape);
          std::vector<std::size_t> idx(L + 1, c);
          for (std::size_t k = 0; k < c; ++k) {
            idx[L] = k;
            out[detail::flat_index(full_shape, idx)] += w.bias.value[k];
          }
          for (std::size_t j = 0; j < L; ++j)
            for (std::size_t a = 0; a < c; ++a) {
              std::vector<std::size_t> at(L + 1, c);
              at[j] = a;
              for (std::size_t k = 0; k < c; ++k) {
                at[L] = k;
                out[detail::flat_index(full_shape, at)] += w.maps[j].value.at(k, a);
              }
            }
          return out;
        } else if constexpr (std::is_same_v<W, CanonicalWeights> ||
                             std::is_same_v<W, HosvdWeights>) {
          DenseTensor core;
          if constexpr (std::is_same_v<W, CanonicalWeights>) {
            // Superdiagonal inner core: product of the L factor outputs.
            Shape s(L, r + 1);
            s.push_back(r);
            DenseTensor diag(s);
            for (std::size_t rho = 0; rho < r; ++rho) {
              std::vector<std::size_t> idx(L, rho);
              idx.push_back(rho);
              diag[detail::flat_index(s, idx)] = 1.0;
            }
            core = detail::fold_output(diag, w.output, L, r);
          } else {
            core = detail::fold_output(w.core.value, w.output, L, r);
          }
          for (std::size_t j = 0; j < L; ++j)
            core = detail::mode_product(
                core, j, detail::transpose(detail::augmented_affine(w.factors[j])));
          return core;
        } else {
          // Chain M_j over augmented child modes with an augmented state mode.
          DenseTensor chain = detail::transpose(detail::augmented_affine(w.first));
          for (std::size_t j = 1; j < L; ++j) {
            const DenseTensor& core = w.cores[j - 1].value;  // (c+1) x (r+1) x r
            Shape s(j + 1, c + 1);
            s.push_back(r + 1);
            DenseTensor next(s);
            const std::size_t prev_rows = chain.size() / (r + 1);
            for (std::size_t a = 0; a < prev_rows; ++a)
              for (std::size_t x = 0; x <= c; ++x) {
                double* dst = next.storage().data() + (a * (c + 1) + x) * (r + 1);
                for (std::size_t b = 0; b <= r; ++b) {
                  const double m = chain[a * (r + 1) + b];
                  if (m == 0.0) continue;
                  const double* src = core.storage().data() + (x * (r + 1) + b) * r;
                  for (std::size_t s2 = 0; s2 < r; ++s2) dst[s2] += m * src[s2];
                }
              }
            std::vector<std::size_t> last(j + 1, c);
            last.push_back(r);
            next[detail::flat_index(s, last)] = 1.0;
            chain = std::move(next);
          }
          DenseTensor out(full_shape);
          const std::size_t rows = chain.size() / (r + 1);
          for (std::size_t a = 0; a < rows; ++a)
            for (std::size_t k = 0; k < c; ++k) {
              double acc = chain[a * (r + 1) + r] * w.output.bias.value[k];
              for (std::size_t s2 = 0; s2 < r; ++s2)
                acc += chain[a * (r + 1) + s2] * w.output.weight.value.at(k, s2);
              out[a * c + k] = acc;
            }
          return out;
        }
      },
      p.weights);
}

}  // namespace tensortree

#endif  // TENSORTREE_AGGREGATORS_HPP
