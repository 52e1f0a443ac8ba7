#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "pdpp/rng.hpp"
#include "pdpp/schedule.hpp"

using namespace pdpp;

TEST_CASE("cosine schedule shape") {
  for (int N : {10, 50, 200}) {
    const NoiseSchedule s = cosine_schedule(N);
    CHECK(s.steps() == N);
    CHECK(s.alpha_bar(0) == 1.0);
    for (int n = 1; n <= N; ++n) {
      CHECK(s.alpha_bar(n) < s.alpha_bar(n - 1));
      CHECK(s.beta(n) > 0.0);
      CHECK(s.beta(n) <= kMaxBeta);
    }
  }
}

TEST_CASE("cosine schedule closed form") {
  const int N = 50;
  const NoiseSchedule s = cosine_schedule(N);
  auto f = [&](int n) {
    const double c = std::cos((n / static_cast<double>(N) + kCosineOffset) / (1 + kCosineOffset) * std::numbers::pi / 2);
    return c * c;
  };
  for (int n = 1; n < N; ++n) {
    const double beta = std::min(1.0 - f(n) / f(n - 1), kMaxBeta);
    CHECK(s.beta(n) == doctest::Approx(beta).epsilon(1e-12));
  }
  // last step is clipped
  CHECK(s.beta(N) == doctest::Approx(kMaxBeta));
}

TEST_CASE("make_schedule rejects unknown kinds") {
  CHECK_THROWS_AS(make_schedule("linear-ish", 10), Error);
  CHECK_THROWS_AS(make_schedule("cosine", 0), Error);
  CHECK(make_schedule("cosine", 20).steps() == 20);
}

TEST_CASE("q_sample formula") {
  const NoiseSchedule s = cosine_schedule(20);
  const Array x0({2}, std::vector<float>{1.0f, -0.5f});
  const Array eps({2}, std::vector<float>{0.3f, 2.0f});
  const Array x = q_sample(x0, 7, eps, s);
  const double a = s.alpha_bar(7);
  CHECK(x[0] == doctest::Approx(std::sqrt(a) * 1.0 + std::sqrt(1 - a) * 0.3).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(std::sqrt(a) * -0.5 + std::sqrt(1 - a) * 2.0).epsilon(1e-6));
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), Error);
  CHECK_THROWS_AS(q_sample(x0, 21, eps, s), Error);
}

TEST_CASE("q_sample matches composed single steps in distribution") {
  const NoiseSchedule s = cosine_schedule(50);
  const int n = 30, draws = 4000;
  Rng rng(3);
  const Array x0({1}, 0.8f);
  double m1 = 0, v1 = 0, m2 = 0, v2 = 0;
  for (int i = 0; i < draws; ++i) {
    const Array e({1}, static_cast<float>(rng.normal()));
    const double a = q_sample(x0, n, e, s)[0];
    double b = 0.8;
    for (int k = 1; k <= n; ++k) b = std::sqrt(s.alpha(k)) * b + std::sqrt(s.beta(k)) * rng.normal();
    m1 += a;
    v1 += a * a;
    m2 += b;
    v2 += b * b;
  }
  m1 /= draws;
  m2 /= draws;
  v1 = v1 / draws - m1 * m1;
  v2 = v2 / draws - m2 * m2;
  const double se = std::sqrt((v1 + v2) / draws);
  CHECK(std::abs(m1 - m2) < 4 * se);
  CHECK(std::abs(m1 - std::sqrt(s.alpha_bar(n)) * 0.8) < 4 * std::sqrt(v1 / draws));
  CHECK(v1 == doctest::Approx(1 - s.alpha_bar(n)).epsilon(0.1));
}

TEST_CASE("posterior coefficients") {
  const NoiseSchedule s = cosine_schedule(30);
  for (int n = 2; n <= 30; ++n) {
    const auto pc = posterior_coefficients(n, s);
    const double ab = s.alpha_bar(n), abp = s.alpha_bar(n - 1);
    CHECK(pc.x0_coef == doctest::Approx(std::sqrt(abp) * s.beta(n) / (1 - ab)));
    CHECK(pc.xn_coef == doctest::Approx(std::sqrt(s.alpha(n)) * (1 - abp) / (1 - ab)));
    CHECK(pc.variance == doctest::Approx((1 - abp) / (1 - ab) * s.beta(n)));
  }
  const Array x0({1}, 1.0f), xn({1}, 0.5f);
  const Posterior p = ddpm_posterior(x0, xn, 5, s);
  const auto pc = posterior_coefficients(5, s);
  CHECK(p.mean[0] == doctest::Approx(pc.x0_coef + 0.5 * pc.xn_coef).epsilon(1e-6));
}

TEST_CASE("ddim eta=1 variance equals ddpm posterior variance") {
  for (int N : {50, 200}) {
    const NoiseSchedule s = cosine_schedule(N);
    for (int n = 2; n <= N; ++n) {
      const double sig = ddim_sigma(n, n - 1, 1.0, s);
      const double post = posterior_coefficients(n, s).variance;
      CHECK(std::abs(sig * sig - post) <= 1e-5 * post);
    }
    CHECK(ddim_sigma(N, N - 1, 0.0, s) == 0.0);
  }
}

TEST_CASE("ddim timesteps and steps") {
  CHECK(ddim_timesteps(200, 10) == std::vector<int>{20, 40, 60, 80, 100, 120, 140, 160, 180, 200});
  CHECK(ddim_timesteps(10, 10) == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  CHECK(ddim_timesteps(7, 3) == std::vector<int>{2, 5, 7});
  CHECK_THROWS_AS(ddim_timesteps(5, 6), Error);

  const NoiseSchedule s = cosine_schedule(20);
  const Array x0({3}, std::vector<float>{0.1f, 0.2f, 0.3f});
  const Array xt({3}, std::vector<float>{1.0f, -1.0f, 0.5f});
  const Array z({3}, 0.0f);
  CHECK(ddim_step(x0, xt, 4, 0, 0.0, s, z) == x0);
  // deterministic step reproduces the implied noise
  const Array nxt = ddim_step(x0, xt, 10, 5, 0.0, s, z);
  const double ab = s.alpha_bar(10), abp = s.alpha_bar(5);
  for (int i = 0; i < 3; ++i) {
    const double eps = (xt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab);
    CHECK(nxt[i] == doctest::Approx(std::sqrt(abp) * x0[i] + std::sqrt(1 - abp) * eps).epsilon(1e-5));
  }
}
