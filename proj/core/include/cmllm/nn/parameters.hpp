#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cmllm/nn/tensor.hpp"

namespace cmllm::nn {

/// Index of a parameter inside its ParameterStore.
struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
};

template <typename T>
struct Parameter {
  std::string name;
  /// Coarse grouping used by gradient checks and reporting ("lora", "backbone", ...).
  std::string group;
  Tensor<T> value;
  bool frozen = false;
};

/// Owns every parameter of a model. Layers hold ParamIds, so a store (and
/// the model around it) copies by value.
template <typename T>
class ParameterStore {
 public:
  ParamId add(std::string name, std::string group, Shape shape, bool frozen) {
    params_.push_back({std::move(name), std::move(group), Tensor<T>(std::move(shape)), frozen});
    return ParamId{params_.size() - 1};
  }

  Parameter<T>& operator[](ParamId id) { return params_.at(id.index); }
  const Parameter<T>& operator[](ParamId id) const { return params_.at(id.index); }
  Parameter<T>& at(std::size_t i) { return params_.at(i); }
  const Parameter<T>& at(std::size_t i) const { return params_.at(i); }

  MatMap<T> mat(ParamId id) { return params_.at(id.index).value.matrix(); }
  ConstMatMap<T> mat(ParamId id) const { return params_.at(id.index).value.matrix(); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::optional<ParamId> find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return ParamId{i};
    }
    return std::nullopt;
  }

  std::size_t count(bool trainable) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (p.frozen != trainable) n += p.value.size();
    }
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
};

/// Gradients laid out like a ParameterStore. Frozen entries stay zero.
template <typename T>
class GradientBuffer {
 public:
  GradientBuffer() = default;
  explicit GradientBuffer(const ParameterStore<T>& store) {
    grads_.reserve(store.size());
    for (const auto& p : store) grads_.emplace_back(p.value.shape());
  }

  MatMap<T> mat(ParamId id) { return grads_.at(id.index).matrix(); }
  ConstMatMap<T> mat(ParamId id) const { return grads_.at(id.index).matrix(); }
  Tensor<T>& at(std::size_t i) { return grads_.at(i); }
  const Tensor<T>& at(std::size_t i) const { return grads_.at(i); }
  std::size_t size() const { return grads_.size(); }

  void set_zero() {
    for (auto& g : grads_) std::fill(g.storage().begin(), g.storage().end(), T(0));
  }
  void add(const GradientBuffer& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i].matrix() += other.grads_[i].matrix();
  }
  void scale(T factor) {
    for (auto& g : grads_) g.matrix() *= factor;
  }

 private:
  std::vector<Tensor<T>> grads_;
};

/// Adds `update` to the gradient of `id` unless the parameter is frozen.
template <typename T, typename Expr>
void accumulate(const ParameterStore<T>& store, GradientBuffer<T>& grads, ParamId id, const Expr& update) {
  if (!store[id].frozen) grads.mat(id) += update;
}

template <typename T>
void init_normal(Tensor<T>& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
}

template <typename T>
void init_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
}

/// Same parameters with every value converted to U (names, groups, flags kept).
template <typename U, typename T>
ParameterStore<U> cast_store(const ParameterStore<T>& src) {
  ParameterStore<U> out;
  for (const auto& p : src) {
    const ParamId id = out.add(p.name, p.group, p.value.shape(), p.frozen);
    out[id].value = p.value.template cast<U>();
  }
  return out;
}

}  // namespace cmllm::nn
