#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "transfusion/errors.hpp"

namespace transfusion {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl;
}

/// Dense row-major tensor of doubles with optional participation in the
/// reverse-mode tape.
///
/// Copies are cheap handles onto the same storage. Values are fixed once the
/// tensor is built; only the gradient slot changes afterwards. The one
/// exception is `mutable_data()` on leaves, which optimizers use between
/// forward/backward pairs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  // Only meaningful on leaves; ops decide requires_grad for their outputs.
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // Leaf-only in-place access for optimizers and gradient checks.
  std::span<double> mutable_data();

  // Same values, fresh storage, not on any tape.
  Tensor clone() const;
  // Copy of the values with no tape link and no requires_grad.
  Tensor detach() const;

  // Identity of the underlying storage.
  const void* id() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_tensor(Shape, std::vector<double>);
  friend std::span<double> grad_slot(const Tensor&);
};

// Builds a plain (non-recorded) tensor; used by op implementations.
Tensor make_tensor(Shape shape, std::vector<double> values);

// Gradient buffer of t, zero-allocated on first use. Empty span when t does
// not require grad, so callers can skip accumulation.
std::span<double> grad_slot(const Tensor& t);

/// Ordered record of primitive operations for one forward pass.
///
/// Nodes are appended in execution order, so parents always precede children.
/// `backward` consumes the recording; a tensor produced on a consumed tape can
/// no longer seed a backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;

  static Tape& current();

  std::size_t size() const noexcept { return nodes_.size(); }
  std::uint64_t generation() const noexcept { return generation_; }
  // Drops the recording without running backward.
  void clear();

  // Attach `out` to this tape with the given pullback.
  void record(const Tensor& out, BackwardFn fn);

  void backward(const Tensor& loss);

 private:
  struct Node {
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::uint64_t generation_ = 1;
};

bool grad_enabled() noexcept;

// Ops called in scope are not recorded.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Seeds d(loss)/d(loss) = 1 and runs the current tape in reverse.
void backward(const Tensor& loss);

}  // namespace transfusion
