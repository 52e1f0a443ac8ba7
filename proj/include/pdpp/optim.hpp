#pragma once

#include <cstdint>
#include <vector>

#include "pdpp/params.hpp"

namespace pdpp {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected ADAM over every parameter of a store. Moments are kept per
// parameter in store order.
template <class T>
class Adam {
 public:
  explicit Adam(ParameterStore<T>& store, AdamConfig cfg = {});

  // Applies one update from the store's current gradients. Throws kNumeric
  // naming the first parameter holding a non-finite gradient; no parameter is
  // modified in that case.
  void step(double lr);

  std::int64_t steps() const { return step_; }
  const ArrayT<T>& first_moment(std::size_t i) const { return m_[i]; }
  const ArrayT<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  ParameterStore<T>& store_;
  AdamConfig cfg_;
  std::vector<ArrayT<T>> m_;
  std::vector<ArrayT<T>> v_;
  std::int64_t step_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace pdpp
