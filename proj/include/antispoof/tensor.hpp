#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "antispoof/common.hpp"

namespace antispoof {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// n-dimensional dense array, row-major, with an optional gradient buffer of
// the same length. Copies are shallow: all copies of a Tensor share one
// storage block, which is what lets the autodiff tape accumulate gradients
// through the handles captured in its closures.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
    validate_shape(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    validate_shape(shape);
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("Tensor: value count " + std::to_string(values.size()) +
                       " does not match shape " + shape_to_string(shape));
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.impl_->data) x = v;
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  // Negative indices count from the end.
  int dim(int i) const {
    const int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("Tensor::dim: axis out of range");
    return impl_->shape[static_cast<std::size_t>(i)];
  }

  std::int64_t size() const { return static_cast<std::int64_t>(impl_->data.size()); }

  T* data() { return impl_->data.data(); }
  const T* data() const { return impl_->data.data(); }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  T& operator[](std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }

  bool has_grad() const { return defined() && !impl_->grad.empty(); }

  // Gradient access is const-qualified on purpose: a Tensor is a handle to
  // shared storage, and the tape's closures hold const copies of it.
  void ensure_grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  }

  T* grad() const {
    ensure_grad();
    return impl_->grad.data();
  }

  const T* grad_or_null() const { return impl_->grad.empty() ? nullptr : impl_->grad.data(); }

  void zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  void drop_grad() const { impl_->grad.clear(); }

  // Deep copy of the values; the copy starts without a gradient buffer.
  Tensor clone() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(impl_->shape);
    U* dst = t.data();
    const T* src = data();
    for (std::int64_t i = 0; i < size(); ++i) dst[i] = static_cast<U>(src[i]);
    return t;
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches this tensor
  };

  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("Tensor: rank-0 shapes are not supported");
    for (int d : shape)
      if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + shape_to_string(shape));
  }

  std::shared_ptr<Impl> impl_;
};

// Named handle to a parameter or buffer; model and optimizer share these.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

}  // namespace antispoof
