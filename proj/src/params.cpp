#include "pdpp/params.hpp"

#include <cmath>

namespace pdpp {

template <class T>
Parameter<T>& ParameterStore<T>::add(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  require(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate parameter name " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = ArrayT<T>(shape);
  p->grad = ArrayT<T>(shape);
  if (fan_in > 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : p->value.vec()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  }
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
Parameter<T>& ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value) {
  require(find(name) == nullptr, ErrorCode::kInvalidArgument, "duplicate parameter name " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->value = ArrayT<T>(shape, value);
  p->grad = ArrayT<T>(shape);
  params_.push_back(std::move(p));
  return *params_.back();
}

template <class T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <class T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <class T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <class T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->grad.fill(T(0));
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace pdpp
