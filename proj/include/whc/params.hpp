#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "whc/tensor.hpp"

namespace whc::nn {

template <typename T>
struct Param {
  std::string name;
  int rank = 4;          ///< 4 for conv weights, 1 for biases
  bool is_bias = false;
  int fan_in = 1;
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
};

/// Named trainable tensors with one gradient buffer each.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, int rank, Shape shape, bool is_bias, int fan_in);

  Param<T>& get(const std::string& name);
  const Param<T>& get(const std::string& name) const;
  const Param<T>* find(const std::string& name) const;

  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }

  /// Total number of scalar parameters.
  std::size_t count() const;

  void zero_grad();

 private:
  std::vector<Param<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Weights ~ N(0, std^2) i.i.d. in declaration order, biases zero.
template <typename T>
void gaussian_init(ParamStore<T>& store, double std, std::uint64_t seed);

/// Weights ~ N(0, 2 / fan_in), biases zero.
template <typename T>
void he_init(ParamStore<T>& store, std::uint64_t seed);

/// theta <- theta - lr * grad, then zeroes every gradient. Throws if any
/// parameter has no gradient from the preceding backward pass.
template <typename T>
void sgd_step(ParamStore<T>& store, double lr);

}  // namespace whc::nn
