#ifndef TENSORTREE_TENSORTREE_HPP
#define TENSORTREE_TENSORTREE_HPP

#include "tensortree/aggregators.hpp"
#include "tensortree/autodiff.hpp"
#include "tensortree/checkpoint.hpp"
#include "tensortree/config.hpp"
#include "tensortree/datasets.hpp"
#include "tensortree/init.hpp"
#include "tensortree/io.hpp"
#include "tensortree/rng.hpp"
#include "tensortree/tensor.hpp"
#include "tensortree/training.hpp"
#include "tensortree/tree.hpp"
#include "tensortree/treelstm.hpp"

#endif  // TENSORTREE_TENSORTREE_HPP
