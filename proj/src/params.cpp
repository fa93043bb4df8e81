#include "whc/params.hpp"

#include <cmath>
#include <random>

#include "whc/error.hpp"

namespace whc::nn {

template <typename T>
Param<T>& ParamStore<T>::add(const std::string& name, int rank, Shape shape, bool is_bias, int fan_in) {
  if (index_.contains(name)) throw InvalidArgument("duplicate parameter name " + name);
  index_.emplace(name, params_.size());
  Param<T>& p = params_.emplace_back();
  p.name = name;
  p.rank = rank;
  p.is_bias = is_bias;
  p.fan_in = fan_in;
  p.value = Tensor<T>(shape);
  p.grad = Tensor<T>(shape);
  return p;
}

template <typename T>
Param<T>& ParamStore<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
  return params_[it->second];
}

template <typename T>
const Param<T>& ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
  return params_[it->second];
}

template <typename T>
const Param<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) {
    p.grad.fill(T(0));
    p.has_grad = false;
  }
}

namespace {

template <typename T, typename StdFn>
void normal_init(ParamStore<T>& store, std::uint64_t seed, StdFn std_for) {
  std::mt19937_64 rng(seed);
  for (auto& p : store.all()) {
    if (p.is_bias) {
      p.value.fill(T(0));
      continue;
    }
    std::normal_distribution<double> dist(0.0, std_for(p));
    for (T& v : p.value.vec()) v = T(dist(rng));
  }
}

}  // namespace

template <typename T>
void gaussian_init(ParamStore<T>& store, double std, std::uint64_t seed) {
  if (!(std > 0.0)) throw InvalidArgument("gaussian_init: std must be positive");
  normal_init(store, seed, [std](const Param<T>&) { return std; });
}

template <typename T>
void he_init(ParamStore<T>& store, std::uint64_t seed) {
  normal_init(store, seed, [](const Param<T>& p) { return std::sqrt(2.0 / double(p.fan_in)); });
}

template <typename T>
void sgd_step(ParamStore<T>& store, double lr) {
  for (const auto& p : store.all())
    if (!p.has_grad) throw TrainingError("sgd_step: parameter " + p.name + " has no gradient");
  const T step = T(lr);
  for (auto& p : store.all()) {
    T* v = p.value.data();
    T* g = p.grad.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      v[i] -= step * g[i];
      g[i] = T(0);
    }
    p.has_grad = false;
  }
}

template class ParamStore<float>;
template class ParamStore<double>;
template void gaussian_init(ParamStore<float>&, double, std::uint64_t);
template void gaussian_init(ParamStore<double>&, double, std::uint64_t);
template void he_init(ParamStore<float>&, std::uint64_t);
template void he_init(ParamStore<double>&, std::uint64_t);
template void sgd_step(ParamStore<float>&, double);
template void sgd_step(ParamStore<double>&, double);

}  // namespace whc::nn
