#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pdpp/array.hpp"
#include "pdpp/rng.hpp"

namespace pdpp {

template <class T>
struct Parameter {
  std::string name;
  ArrayT<T> value;
  ArrayT<T> grad;
};

// Ordered, name-addressable parameter set. Addresses of stored parameters are
// stable for the lifetime of the store.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in <= 0 means zero init.
  Parameter<T>& add(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Parameter<T>& add_constant(const std::string& name, Shape shape, T value);

  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace pdpp
