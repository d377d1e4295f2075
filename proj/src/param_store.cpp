#include "defstereo/param_store.hpp"

#include <stdexcept>

namespace defstereo {

template <typename T>
void ParamStore<T>::check_name(const std::string& name) const {
  if (name.empty() || name.front() == '.' || name.back() == '.' ||
      name.find("..") != std::string::npos) {
    throw std::invalid_argument("invalid parameter name '" + name + "'");
  }
  if (params_.count(name) || buffers_.count(name)) {
    throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }
}

template <typename T>
BasicTensor<T> ParamStore<T>::add(const std::string& name, BasicTensor<T> tensor, Decay decay) {
  check_name(name);
  tensor.set_requires_grad(true);
  params_.emplace(name, ParamEntry<T>{tensor, decay});
  return tensor;
}

template <typename T>
BasicTensor<T> ParamStore<T>::add_buffer(const std::string& name, BasicTensor<T> tensor) {
  check_name(name);
  tensor.set_requires_grad(false);
  buffers_.emplace(name, tensor);
  return tensor;
}

template <typename T>
BasicTensor<T> ParamStore<T>::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second.tensor;
}

template <typename T>
BasicTensor<T> ParamStore<T>::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("no buffer named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& [name, entry] : params_) n += entry.tensor.numel();
  return n;
}

template <typename T>
std::map<std::string, std::size_t> ParamStore<T>::count_by_prefix(int depth) const {
  std::map<std::string, std::size_t> out;
  for (const auto& [name, entry] : params_) {
    std::size_t pos = 0;
    for (int seen = 0; seen < depth; ++seen) {
      pos = name.find('.', seen == 0 ? 0 : pos + 1);
      if (pos == std::string::npos) break;
    }
    out[pos == std::string::npos ? name : name.substr(0, pos)] += entry.tensor.numel();
  }
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, entry] : params_) entry.tensor.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace defstereo
