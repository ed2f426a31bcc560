#include "transfusion/grad_check.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "transfusion/ops.hpp"

namespace transfusion {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn, KinkLog& log) {
  NoGradGuard no_grad;
  KinkLogScope scope(log);
  return loss_fn().item();
}

}  // namespace

GradCheckReport grad_check_leaves(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves,
                                  double eps, double tol) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  for (const auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
      throw TapeError("grad_check: every checked tensor must be a leaf with requires_grad");
    }
  }

  {
    KinkLog first, second;
    const double v1 = evaluate(loss_fn, first);
    const double v2 = evaluate(loss_fn, second);
    if (std::bit_cast<std::uint64_t>(v1) != std::bit_cast<std::uint64_t>(v2) || !(first == second)) {
      throw NumericError("grad_check: function is not deterministic at the probe point");
    }
  }

  Tape::current().clear();
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss_fn());

  GradCheckReport report;
  std::size_t flat = 0;
  for (auto& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
      const double saved = values[i];
      KinkLog plus_log, minus_log;
      values[i] = saved + eps;
      const double plus = evaluate(loss_fn, plus_log);
      values[i] = saved - eps;
      const double minus = evaluate(loss_fn, minus_log);
      values[i] = saved;

      if (!(plus_log == minus_log)) {
        report.kink_coords.push_back(flat);
        continue;
      }
      const double numeric = (plus - minus) / (2.0 * eps);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), kGradCheckAbsFloor});
      const double rel = std::fabs(analytic[i] - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err || std::isnan(rel)) {
        report.max_rel_err = std::isnan(rel) ? INFINITY : rel;
        report.worst_coord = flat;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                           double tol) {
  Tensor leaf = Tensor::from(x.shape(), x.to_vector(), true);
  return grad_check_leaves([&] { return f(leaf); }, {leaf}, eps, tol);
}

}  // namespace transfusion
