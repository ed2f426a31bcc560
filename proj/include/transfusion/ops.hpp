#pragma once

#include <cstdint>
#include <vector>

#include "transfusion/tensor.hpp"

namespace transfusion {

// Primitive differentiable operations. Each records a tape node when any
// input requires grad and recording is enabled.
//
// Broadcasting is limited to scalar-vs-tensor (an operand with one element);
// rows/columns are expanded explicitly with expand_rows/expand_cols.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double s);
Tensor add_scalar(const Tensor& t, double s);

Tensor neg(const Tensor& t);
// relu'(0) = 0.
Tensor relu(const Tensor& t);
Tensor exp(const Tensor& t);
// d|x|/dx at 0 is 0.
Tensor abs(const Tensor& t);
Tensor elu(const Tensor& t);
Tensor sqrt(const Tensor& t);
// max(t, floor); zero gradient where the floor is active.
Tensor clamp_min(const Tensor& t, double floor);

enum class ReduceKind { sum, mean, max };

// Removes `axis` from the shape.
Tensor reduce(const Tensor& t, std::size_t axis, ReduceKind kind);
// Full reductions to a rank-0 scalar.
Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

Tensor transpose2d(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Half-open range [begin, end) along axis.
Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end);

// [d] or [1xd] -> [rows x d]
Tensor expand_rows(const Tensor& t, std::size_t rows);
// [l] or [lx1] -> [l x cols]
Tensor expand_cols(const Tensor& t, std::size_t cols);

// Row-wise softmax of a 2-d tensor with max subtraction.
Tensor softmax_rows(const Tensor& t);

/// Records which side of each nondifferentiable point (relu/abs/clamp
/// inputs, max-reduction winners) a forward pass took. Two passes whose logs
/// differ straddle a kink.
class KinkLog {
 public:
  static constexpr double kBand = 1e-7;

  void push(std::int32_t code) { codes_.push_back(code); }
  const std::vector<std::int32_t>& codes() const noexcept { return codes_; }
  bool operator==(const KinkLog&) const = default;

  static KinkLog* active() noexcept;

 private:
  std::vector<std::int32_t> codes_;
  friend class KinkLogScope;
};

class KinkLogScope {
 public:
  explicit KinkLogScope(KinkLog& log);
  ~KinkLogScope();
  KinkLogScope(const KinkLogScope&) = delete;
  KinkLogScope& operator=(const KinkLogScope&) = delete;

 private:
  KinkLog* previous_;
};

}  // namespace transfusion
