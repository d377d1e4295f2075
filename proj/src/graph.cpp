#include "defstereo/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace defstereo {

namespace {

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

template <typename T>
bool BasicGraph<T>::tracks(std::initializer_list<const BasicTensor<T>*> inputs) const {
  if (!recording()) return false;
  for (const auto* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void BasicGraph<T>::record(std::string op, std::vector<BasicTensor<T>> inputs,
                           BasicTensor<T> output, std::function<void()> backward) {
  if (!all_finite<T>(output.data())) {
    throw NonFiniteError(op + ": non-finite value in forward output");
  }
  if (!recording() || !output.requires_grad()) return;
  std::erase_if(inputs, [](const BasicTensor<T>& t) { return !t.defined(); });
  consumed_ = false;
  nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
}

template <typename T>
void BasicGraph<T>::backward(BasicTensor<T> loss) {
  if (consumed_) {
    throw std::logic_error("backward called twice without a new forward pass");
  }
  if (loss.numel() != 1) {
    throw ShapeError("backward on non-scalar tensor " + dims_to_string(loss.dims()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward on a tensor that does not require grad");
  }
  std::size_t end = nodes_.size();
  while (end > 0 && !nodes_[end - 1].output.same_storage(loss)) --end;
  if (end == 0) {
    throw std::logic_error("backward: loss was not produced by this graph");
  }

  loss.grad()[0] += T(1);
  visited_.clear();
  std::unordered_set<const void*> produced;
  for (std::size_t i = end; i-- > 0;) {
    visited_.push_back(nodes_[i].op);
    nodes_[i].backward();
  }
  for (std::size_t i = 0; i < end; ++i) produced.insert(nodes_[i].output.data().data());
  for (std::size_t i = 0; i < end; ++i) {
    for (const auto& in : nodes_[i].inputs) {
      if (!in.requires_grad() || produced.count(in.data().data())) continue;
      if (!all_finite<T>(in.grad())) {
        throw NonFiniteError("backward: non-finite gradient after " + nodes_[i].op);
      }
    }
  }
  nodes_.clear();
  consumed_ = true;
}

template <typename T>
void BasicGraph<T>::clear() {
  nodes_.clear();
  consumed_ = false;
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace defstereo
