#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace defstereo {

using Dims = std::vector<int>;

std::size_t numel_of(const Dims& dims);
std::string dims_to_string(const Dims& dims);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Handle to a dense row-major array. Copies share storage; use clone() for a
/// deep copy. Image tensors use N x C x H x W layout.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Dims dims, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    s_->data.assign(checked_numel(dims), T(0));
    s_->dims = std::move(dims);
    set_requires_grad(requires_grad);
  }

  BasicTensor(Dims dims, std::vector<T> values, bool requires_grad = false)
      : s_(std::make_shared<Storage>()) {
    if (values.size() != checked_numel(dims)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill dims " + dims_to_string(dims));
    }
    s_->dims = std::move(dims);
    s_->data = std::move(values);
    set_requires_grad(requires_grad);
  }

  static BasicTensor full(Dims dims, T value, bool requires_grad = false) {
    BasicTensor t(std::move(dims), requires_grad);
    std::fill(t.s_->data.begin(), t.s_->data.end(), value);
    return t;
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Dims{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Dims& dims() const { return storage().dims; }
  int rank() const { return static_cast<int>(storage().dims.size()); }
  int dim(int i) const { return storage().dims.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return storage().data.size(); }

  std::span<T> data() { return storage().data; }
  std::span<const T> data() const { return storage().data; }

  bool requires_grad() const { return storage().requires_grad; }
  std::span<T> grad() { return storage().grad; }
  std::span<const T> grad() const { return storage().grad; }

  void set_requires_grad(bool on) {
    auto& s = storage();
    s.requires_grad = on;
    if (on) {
      s.grad.assign(s.data.size(), T(0));
    } else {
      s.grad.clear();
      s.grad.shrink_to_fit();
    }
  }

  void zero_grad() {
    auto& g = storage().grad;
    std::fill(g.begin(), g.end(), T(0));
  }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor with dims " + dims_to_string(dims()));
    }
    return storage().data[0];
  }

  T& at(int n, int c, int h, int w) { return storage().data[offset(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return storage().data[offset(n, c, h, w)]; }

  /// Deep copy of dims and data; the copy does not require grad.
  BasicTensor clone() const { return BasicTensor(dims(), storage().data); }

  bool same_storage(const BasicTensor& other) const { return s_ == other.s_; }

 private:
  struct Storage {
    Dims dims;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  static std::size_t checked_numel(const Dims& dims) {
    for (int d : dims) {
      if (d < 0) throw ShapeError("negative extent in dims " + dims_to_string(dims));
    }
    return numel_of(dims);
  }

  Storage& storage() {
    if (!s_) throw std::logic_error("use of undefined tensor");
    return *s_;
  }
  const Storage& storage() const {
    if (!s_) throw std::logic_error("use of undefined tensor");
    return *s_;
  }

  std::size_t offset(int n, int c, int h, int w) const {
    const auto& d = storage().dims;
    return ((static_cast<std::size_t>(n) * d[1] + c) * d[2] + h) * d[3] + w;
  }

  std::shared_ptr<Storage> s_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace defstereo
