#include "pdpp/optim.hpp"

#include <cmath>

namespace pdpp {

template <class T>
Adam<T>::Adam(ParameterStore<T>& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  for (std::size_t i = 0; i < store_.size(); ++i) {
    m_.emplace_back(store_[i].value.shape());
    v_.emplace_back(store_[i].value.shape());
  }
}

template <class T>
void Adam<T>::step(double lr) {
  require(m_.size() == store_.size(), ErrorCode::kInternal, "optimizer state does not match parameter store");
  for (std::size_t i = 0; i < store_.size(); ++i)
    require(store_[i].grad.all_finite(), ErrorCode::kNumeric, "non-finite gradient in parameter " + store_[i].name);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < store_.size(); ++i) {
    auto& p = store_[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p.value[k] = static_cast<T>(p.value[k] - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace pdpp
