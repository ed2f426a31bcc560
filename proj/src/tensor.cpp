#include "transfusion/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "tensor_impl.hpp"

namespace transfusion {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor make_tensor(Shape shape, std::vector<double> values) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  Tensor t = make_tensor(std::move(shape), std::vector<double>(n, value));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), std::move(values));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ShapeError("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::data() const { return impl().data; }

std::vector<double> Tensor::to_vector() const { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

double Tensor::at(std::size_t i) const {
  const auto& d = impl().data;
  if (i >= d.size()) throw ShapeError("flat index out of range");
  return d[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  const auto& s = shape();
  if (s.size() != 2 || i >= s[0] || j >= s[1]) {
    throw ShapeError("2-d index out of range for " + shape_str(s));
  }
  return impl().data[i * s[1] + j];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& im = impl();
  if (!im.leaf) throw TapeError("requires_grad can only be set on leaf tensors");
  im.requires_grad = flag;
  if (flag) {
    im.grad.assign(im.data.size(), 0.0);
  } else {
    im.grad.clear();
  }
}

bool Tensor::is_leaf() const { return impl().leaf; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

void Tensor::zero_grad() {
  auto& im = impl();
  if (im.requires_grad) im.grad.assign(im.data.size(), 0.0);
}

std::span<double> Tensor::mutable_data() {
  auto& im = impl();
  if (!im.leaf) throw TapeError("mutable_data() is only available on leaf tensors");
  return im.data;
}

Tensor Tensor::clone() const {
  const auto& im = impl();
  Tensor t = make_tensor(im.shape, im.data);
  if (im.leaf && im.requires_grad) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::detach() const {
  const auto& im = impl();
  return make_tensor(im.shape, im.data);
}

std::span<double> grad_slot(const Tensor& t) {
  auto& im = t.impl();
  if (!im.requires_grad) return {};
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::clear() {
  nodes_.clear();
  ++generation_;
}

void Tape::record(const Tensor& out, BackwardFn fn) {
  auto& im = out.impl();
  im.requires_grad = true;
  im.leaf = false;
  im.tape_generation = generation_;
  im.node_index = nodes_.size();
  nodes_.push_back(Node{out, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  auto& li = loss.impl();
  if (li.data.size() != 1) {
    throw TapeError("backward needs a scalar loss, got shape " + shape_str(li.shape));
  }
  if (li.leaf || li.node_index == detail::kNoNode) {
    throw TapeError("loss was not produced by a recorded operation");
  }
  if (li.tape_generation != generation_ || li.node_index >= nodes_.size()) {
    throw TapeError("tape already consumed; re-run the forward pass before calling backward again");
  }
  li.grad.assign(1, 1.0);
  for (std::size_t k = li.node_index + 1; k-- > 0;) {
    auto& node = nodes_[k];
    auto& oi = node.output.impl();
    if (oi.grad.empty()) continue;
    node.fn(oi.grad);
    // Interior gradients are no longer needed once pulled back.
    std::vector<double>().swap(oi.grad);
  }
  clear();
}

void backward(const Tensor& loss) { Tape::current().backward(loss); }

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace transfusion
