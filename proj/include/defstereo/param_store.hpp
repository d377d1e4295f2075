#pragma once

#include <map>
#include <string>

#include "defstereo/tensor.hpp"

namespace defstereo {

enum class Decay { Yes, No };

template <typename T>
struct ParamEntry {
  BasicTensor<T> tensor;
  Decay decay = Decay::Yes;
};

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Names are dot-separated paths; iteration is lexicographic.
template <typename T>
class ParamStore {
 public:
  BasicTensor<T> add(const std::string& name, BasicTensor<T> tensor, Decay decay);
  BasicTensor<T> add_buffer(const std::string& name, BasicTensor<T> tensor);

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  BasicTensor<T> get(const std::string& name) const;
  BasicTensor<T> buffer(const std::string& name) const;

  const std::map<std::string, ParamEntry<T>>& params() const { return params_; }
  const std::map<std::string, BasicTensor<T>>& buffers() const { return buffers_; }

  /// Total number of trainable scalars.
  std::size_t count() const;
  /// Trainable scalars per name prefix up to `depth` path segments.
  std::map<std::string, std::size_t> count_by_prefix(int depth) const;

  void zero_grad();

 private:
  void check_name(const std::string& name) const;

  std::map<std::string, ParamEntry<T>> params_;
  std::map<std::string, BasicTensor<T>> buffers_;
};

}  // namespace defstereo
