#ifndef TENSORTREE_INIT_HPP
#define TENSORTREE_INIT_HPP

#include <cmath>
#include <stdexcept>

#include "tensortree/rng.hpp"
#include "tensortree/tensor.hpp"

namespace tensortree {

/// I.i.d. Normal(0, 2 / fan_in) samples.
inline DenseTensor kaiming_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  if (fan_in == 0) throw std::invalid_argument("kaiming_normal: fan_in must be positive");
  DenseTensor out(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& x : out.storage()) x = rng.normal(0.0, stddev);
  return out;
}

}  // namespace tensortree

#endif  // TENSORTREE_INIT_HPP
