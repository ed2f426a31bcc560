#pragma once

#include <functional>
#include <vector>

#include "transfusion/tensor.hpp"

namespace transfusion {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t checked = 0;
  // Flat coordinates (across all leaves, in order) whose finite-difference
  // probe crossed a relu/abs/max kink. They do not count toward `pass`.
  std::vector<std::size_t> kink_coords;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline constexpr double kGradCheckAbsFloor = 1e-8;

// Central differences (f(x+eps e_i) - f(x-eps e_i)) / (2 eps) against the
// tape gradient for every coordinate of every leaf. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator.
//
// Throws NumericError if two evaluations at the same point disagree.
GradCheckReport grad_check_leaves(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                  double eps, double tol);

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                           double tol);

}  // namespace transfusion
