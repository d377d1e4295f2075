#pragma once

#include <functional>
#include <string>
#include <vector>

#include "defstereo/tensor.hpp"

namespace defstereo {

/// Tape of executed operations for reverse-mode differentiation.
///
/// Operations append nodes in execution order, so the tape is already in
/// topological order; backward() walks it in reverse. A tape is consumed by
/// backward(): calling it again before recording a new forward pass throws.
/// A graph is confined to one thread.
template <typename T>
class BasicGraph {
 public:
  enum class Mode { Record, NoGrad };

  explicit BasicGraph(Mode mode = Mode::Record) : mode_(mode) {}

  BasicGraph(const BasicGraph&) = delete;
  BasicGraph& operator=(const BasicGraph&) = delete;

  bool recording() const { return mode_ == Mode::Record; }

  /// True when an op over these inputs must produce a grad-tracking output.
  bool tracks(std::initializer_list<const BasicTensor<T>*> inputs) const;

  void record(std::string op, std::vector<BasicTensor<T>> inputs, BasicTensor<T> output,
              std::function<void()> backward);

  void backward(BasicTensor<T> loss);

  std::size_t size() const { return nodes_.size(); }

  /// Op names of the most recent backward pass, in visiting order.
  const std::vector<std::string>& last_backward_order() const { return visited_; }

  void clear();

 private:
  struct Node {
    std::string op;
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    std::function<void()> backward;
  };

  Mode mode_;
  std::vector<Node> nodes_;
  std::vector<std::string> visited_;
  bool consumed_ = false;
};

using Graph = BasicGraph<float>;
using Graph64 = BasicGraph<double>;

}  // namespace defstereo
