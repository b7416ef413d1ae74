#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "cardio/autograd.hpp"

namespace cardio {

enum class ParamKind {
  trainable,  // updated by the optimizer
  buffer,     // persisted state that is never differentiated (running stats, fixed tables)
};

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for initialization, optimization and serialization.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    ParamKind kind = ParamKind::trainable;
  };

  void add(std::string name, Tensor<T> value, ParamKind kind);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const;
  const Tensor<T>& get(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor<T>& get_mutable(const std::string& name) { return entries_[index_of(name)].value; }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Total number of trainable scalars.
  std::size_t trainable_scalars() const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.kind);
    return out;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.kind != y.kind || !(x.value == y.value)) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Exposes a ParameterStore to one Graph. Each trainable tensor becomes a
/// single differentiable leaf on first use; buffers become constants.
template <typename T>
class ParameterBinding {
 public:
  ParameterBinding(Graph<T>& graph, ParameterStore<T>& store);

  Var<T> operator()(const std::string& name);
  /// Mutable access to a buffer (batch-norm running statistics).
  Tensor<T>& buffer(const std::string& name);

  Graph<T>& graph() noexcept { return graph_; }
  ParameterStore<T>& store() noexcept { return store_; }

  /// Gradients aligned with store().entries(); zeros for unused trainables,
  /// empty tensors for buffers.
  std::vector<Tensor<T>> gradients() const;

 private:
  Graph<T>& graph_;
  ParameterStore<T>& store_;
  std::vector<Var<T>> bound_;
};

}  // namespace cardio
