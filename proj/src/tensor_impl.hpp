#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "transfusion/tensor.hpp"

namespace transfusion::detail {

inline constexpr std::size_t kNoNode = std::numeric_limits<std::size_t>::max();

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t tape_generation = 0;
  std::size_t node_index = kNoNode;
};

}  // namespace transfusion::detail
