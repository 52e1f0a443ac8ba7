#include "pdpp/schedule.hpp"

#include <cmath>
#include <numbers>

namespace pdpp {

NoiseSchedule::NoiseSchedule(std::string kind, std::vector<double> betas)
    : kind_(std::move(kind)), betas_(std::move(betas)) {
  require(!betas_.empty(), ErrorCode::kInvalidArgument, "noise schedule needs at least one step");
  alpha_bars_.assign(betas_.size() + 1, 1.0);
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    require(betas_[i] > 0.0 && betas_[i] < 1.0, ErrorCode::kInvalidArgument,
            "beta_" + std::to_string(i + 1) + " outside (0, 1)");
    alpha_bars_[i + 1] = alpha_bars_[i] * (1.0 - betas_[i]);
  }
}

double NoiseSchedule::beta(int n) const {
  require(n >= 1 && n <= steps(), ErrorCode::kInvalidArgument,
          "diffusion step " + std::to_string(n) + " outside [1, " + std::to_string(steps()) + "]");
  return betas_[n - 1];
}

double NoiseSchedule::alpha_bar(int n) const {
  require(n >= 0 && n <= steps(), ErrorCode::kInvalidArgument,
          "diffusion step " + std::to_string(n) + " outside [0, " + std::to_string(steps()) + "]");
  return alpha_bars_[n];
}

NoiseSchedule cosine_schedule(int steps) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "cosine schedule needs N >= 1, got " + std::to_string(steps));
  auto f = [steps](double t) {
    const double c = std::cos(((t / steps + kCosineOffset) / (1.0 + kCosineOffset)) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  std::vector<double> betas(steps);
  for (int n = 1; n <= steps; ++n) {
    const double ab = f(n) / f0;
    const double ab_prev = f(n - 1) / f0;
    betas[n - 1] = std::min(1.0 - ab / ab_prev, kMaxBeta);
  }
  return NoiseSchedule("cosine", std::move(betas));
}

NoiseSchedule make_schedule(const std::string& kind, int steps) {
  if (kind == "cosine") return cosine_schedule(steps);
  fail(ErrorCode::kInvalidArgument, "unknown noise schedule '" + kind + "'");
}

void q_sample_into(std::span<const float> x0, int n, std::span<const float> eps, const NoiseSchedule& sched,
                   std::span<float> out) {
  require(n >= 1 && n <= sched.steps(), ErrorCode::kInvalidArgument,
          "q_sample step " + std::to_string(n) + " outside [1, " + std::to_string(sched.steps()) + "]");
  require(eps.size() == x0.size() && out.size() == x0.size(), ErrorCode::kShapeMismatch,
          "q_sample noise shape does not match x0");
  const double a = std::sqrt(sched.alpha_bar(n));
  const double s = std::sqrt(1.0 - sched.alpha_bar(n));
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<float>(a * x0[i] + s * eps[i]);
}

Array q_sample(const Array& x0, int n, const Array& eps, const NoiseSchedule& sched) {
  require(eps.shape() == x0.shape(), ErrorCode::kShapeMismatch,
          "q_sample noise shape " + shape_str(eps.shape()) + " != x0 shape " + shape_str(x0.shape()));
  Array out(x0.shape());
  q_sample_into(x0.span(), n, eps.span(), sched, out.span());
  return out;
}

PosteriorCoefficients posterior_coefficients(int n, const NoiseSchedule& sched) {
  require(n >= 2 && n <= sched.steps(), ErrorCode::kInvalidArgument,
          "ddpm posterior needs 2 <= n <= N, got n = " + std::to_string(n));
  const double ab = sched.alpha_bar(n);
  const double ab_prev = sched.alpha_bar(n - 1);
  const double beta = sched.beta(n);
  return {std::sqrt(ab_prev) * beta / (1.0 - ab), std::sqrt(sched.alpha(n)) * (1.0 - ab_prev) / (1.0 - ab),
          (1.0 - ab_prev) / (1.0 - ab) * beta};
}

Posterior ddpm_posterior(const Array& x0_hat, const Array& x_n, int n, const NoiseSchedule& sched) {
  require(x0_hat.shape() == x_n.shape(), ErrorCode::kShapeMismatch, "ddpm posterior operand shapes differ");
  const auto c = posterior_coefficients(n, sched);
  Array mean(x_n.shape());
  for (std::size_t i = 0; i < mean.size(); ++i)
    mean[i] = static_cast<float>(c.x0_coef * x0_hat[i] + c.xn_coef * x_n[i]);
  return {std::move(mean), c.variance};
}

double ddim_sigma(int t_n, int t_prev, double eta, const NoiseSchedule& sched) {
  require(t_prev < t_n, ErrorCode::kInvalidArgument, "ddim step requires t_prev < t_n");
  require(eta >= 0.0, ErrorCode::kInvalidArgument, "ddim eta must be >= 0");
  const double ab = sched.alpha_bar(t_n);
  const double ab_prev = sched.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

void ddim_step_into(std::span<const float> x0_hat, std::span<const float> x_tn, int t_n, int t_prev, double eta,
                    const NoiseSchedule& sched, std::span<const float> noise, std::span<float> out) {
  require(x0_hat.size() == x_tn.size() && out.size() == x_tn.size(), ErrorCode::kShapeMismatch,
          "ddim step operand sizes differ");
  const double sigma = ddim_sigma(t_n, t_prev, eta, sched);
  if (t_prev == 0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x0_hat[i];
    return;
  }
  const double ab = sched.alpha_bar(t_n);
  const double ab_prev = sched.alpha_bar(t_prev);
  const double dir2 = 1.0 - ab_prev - sigma * sigma;
  require(dir2 >= 0.0, ErrorCode::kInvalidArgument,
          "ddim step " + std::to_string(t_n) + " -> " + std::to_string(t_prev) + " with eta " + std::to_string(eta) +
              " has negative direction variance");
  const double dir = std::sqrt(dir2);
  const double sab = std::sqrt(ab), sab_prev = std::sqrt(ab_prev), s1 = std::sqrt(1.0 - ab);
  const bool noisy = sigma > 0.0;
  if (noisy)
    require(noise.size() == out.size(), ErrorCode::kShapeMismatch, "ddim step noise size mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = (x_tn[i] - sab * x0_hat[i]) / s1;
    double v = sab_prev * x0_hat[i] + dir * eps;
    if (noisy) v += sigma * noise[i];
    out[i] = static_cast<float>(v);
  }
}

Array ddim_step(const Array& x0_hat, const Array& x_tn, int t_n, int t_prev, double eta, const NoiseSchedule& sched,
                const Array& noise) {
  Array out(x_tn.shape());
  ddim_step_into(x0_hat.span(), x_tn.span(), t_n, t_prev, eta, sched, noise.span(), out.span());
  return out;
}

std::vector<int> ddim_timesteps(int steps, int count) {
  require(count >= 1 && count <= steps, ErrorCode::kInvalidArgument,
          "ddim step count " + std::to_string(count) + " must lie in [1, " + std::to_string(steps) + "]");
  std::vector<int> ts(count);
  for (int k = 1; k <= count; ++k)
    ts[k - 1] = static_cast<int>(std::lround(static_cast<double>(k) * steps / count));
  return ts;
}

}  // namespace pdpp
