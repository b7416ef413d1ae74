#include "cardio/parameters.hpp"

namespace cardio {

template <typename T>
void ParameterStore<T>::add(std::string name, Tensor<T> value, ParamKind kind) {
  if (contains(name)) throw Error("parameter store: duplicate name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(Entry{std::move(name), std::move(value), kind});
}

template <typename T>
std::size_t ParameterStore<T>::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("parameter store: no tensor named '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t ParameterStore<T>::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.kind == ParamKind::trainable) n += e.value.size();
  }
  return n;
}

template <typename T>
ParameterBinding<T>::ParameterBinding(Graph<T>& graph, ParameterStore<T>& store)
    : graph_(graph), store_(store), bound_(store.size()) {}

template <typename T>
Var<T> ParameterBinding<T>::operator()(const std::string& name) {
  const std::size_t i = store_.index_of(name);
  if (!bound_[i].valid()) {
    const auto& entry = store_.entries()[i];
    bound_[i] = entry.kind == ParamKind::trainable ? graph_.parameter(entry.value)
                                                   : graph_.constant(entry.value);
  }
  return bound_[i];
}

template <typename T>
Tensor<T>& ParameterBinding<T>::buffer(const std::string& name) {
  auto& entry = store_.entries()[store_.index_of(name)];
  if (entry.kind != ParamKind::buffer) throw Error("'" + name + "' is not a buffer");
  return entry.value;
}

template <typename T>
std::vector<Tensor<T>> ParameterBinding<T>::gradients() const {
  std::vector<Tensor<T>> out(store_.size());
  for (std::size_t i = 0; i < store_.size(); ++i) {
    const auto& entry = store_.entries()[i];
    if (entry.kind != ParamKind::trainable) continue;
    out[i] = bound_[i].valid() ? graph_.grad(bound_[i]) : Tensor<T>(entry.value.shape());
  }
  return out;
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class ParameterBinding<float>;
template class ParameterBinding<double>;

}  // namespace cardio
