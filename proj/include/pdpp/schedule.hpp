#pragma once

#include <span>
#include <string>
#include <vector>

#include "pdpp/array.hpp"

namespace pdpp {

// beta_n for n in [1, N] and alpha_bar_n for n in [0, N], alpha_bar_0 = 1.
// alpha_bar is always the running product of (1 - beta), including after
// clipping, so the two views never disagree.
class NoiseSchedule {
 public:
  NoiseSchedule(std::string kind, std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  const std::string& kind() const { return kind_; }
  double beta(int n) const;
  double alpha(int n) const { return 1.0 - beta(n); }
  double alpha_bar(int n) const;

 private:
  std::string kind_;
  std::vector<double> betas_;       // betas_[n-1] = beta_n
  std::vector<double> alpha_bars_;  // alpha_bars_[n] = alpha_bar_n
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

NoiseSchedule cosine_schedule(int steps);
NoiseSchedule make_schedule(const std::string& kind, int steps);

// sqrt(alpha_bar_n) * x0 + sqrt(1 - alpha_bar_n) * eps, for 1 <= n <= N.
Array q_sample(const Array& x0, int n, const Array& eps, const NoiseSchedule& sched);
void q_sample_into(std::span<const float> x0, int n, std::span<const float> eps, const NoiseSchedule& sched,
                   std::span<float> out);

struct PosteriorCoefficients {
  double x0_coef;
  double xn_coef;
  double variance;
};
PosteriorCoefficients posterior_coefficients(int n, const NoiseSchedule& sched);

struct Posterior {
  Array mean;
  double variance;
};
// Gaussian posterior q(x_{n-1} | x_n, x0_hat) for 2 <= n <= N.
Posterior ddpm_posterior(const Array& x0_hat, const Array& x_n, int n, const NoiseSchedule& sched);

double ddim_sigma(int t_n, int t_prev, double eta, const NoiseSchedule& sched);
// One DDIM update from t_n to t_prev. t_prev == 0 is the terminal step and
// returns x0_hat unchanged.
Array ddim_step(const Array& x0_hat, const Array& x_tn, int t_n, int t_prev, double eta, const NoiseSchedule& sched,
                const Array& noise);
void ddim_step_into(std::span<const float> x0_hat, std::span<const float> x_tn, int t_n, int t_prev, double eta,
                    const NoiseSchedule& sched, std::span<const float> noise, std::span<float> out);

// Uniformly spaced ascending timesteps t_k = round(k * N / count), k = 1..count.
std::vector<int> ddim_timesteps(int steps, int count);

}  // namespace pdpp
