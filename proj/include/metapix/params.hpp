#pragma once

#include "metapix/tensor.hpp"

#include <map>
#include <stdexcept>
#include <string>

namespace metapix {

/// Named trainable tensors. Iteration is in lexicographic name order.
template <class Scalar>
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor<Scalar>>;

  Tensor<Scalar>& add(const std::string& name, Tensor<Scalar> value) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    value.set_requires_grad(true);
    return params_.emplace(name, std::move(value)).first->second;
  }

  Tensor<Scalar>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::size_t size() const noexcept { return params_.size(); }
  bool empty() const noexcept { return params_.empty(); }
  Index element_count() const {
    Index n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Same names with the same shapes.
  bool congruent(const ParamSet& other) const {
    if (params_.size() != other.params_.size()) return false;
    auto a = params_.begin();
    auto b = other.params_.begin();
    for (; a != params_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    }
    return true;
  }

  /// Parameter values equal bit for bit (gradients ignored).
  bool same_values(const ParamSet& other) const {
    if (!congruent(other)) return false;
    for (const auto& [name, t] : params_) {
      if (!t.same_values(other.at(name))) return false;
    }
    return true;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }
  void clear_grad() {
    for (auto& [_, t] : params_) t.clear_grad();
  }

  template <class Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& [name, t] : params_) out.add(name, t.template cast<Other>());
    return out;
  }

 private:
  Map params_;
};

using ParamSetF = ParamSet<float>;

}  // namespace metapix
