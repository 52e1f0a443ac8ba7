#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "pdpp/autodiff.hpp"
#include "pdpp/checkpoint.hpp"
#include "pdpp/optim.hpp"
#include "support/gradcheck.hpp"

using namespace pdpp;
using pdpp::testing::check_input;

namespace {

ArrayD randn(Shape s, std::uint64_t seed, double scale = 1.0) {
  ArrayD a(std::move(s));
  Rng r(seed);
  for (auto& v : a.vec()) v = scale * r.normal();
  return a;
}

// loss = sum(y * w) with fixed random w so every output coordinate matters
Var project_sum(Graph<double>& g, Var y, std::uint64_t seed = 99) {
  return g.sum(g.mul(y, g.constant(randn(g.shape(y), seed))));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("array basics") {
  Array a({2, 3});
  CHECK(a.size() == 6);
  a.at({1, 2}) = 5.0f;
  CHECK(a[5] == 5.0f);
  CHECK(a.reshaped({3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS((void)a.reshaped({4, 2}), Error);
  CHECK(numel({2, 3, 4}) == 24);
  CHECK(shape_str({2, 3}) == "[2,3]");
}

TEST_CASE("rng substreams depend only on seed and key") {
  Rng a(7), b(7);
  (void)a.next_u64();
  CHECK(a.substream(3).next_u64() == b.substream(3).next_u64());
  CHECK(b.substream(3).next_u64() != b.substream(4).next_u64());
}

TEST_CASE("elementwise gradients") {
  const ArrayD x = randn({2, 3, 4}, 1);
  const ArrayD other = randn({2, 1, 4}, 2);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.mish(v)); }) < kTol);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.silu(v)); }) < kTol);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.add(v, g.constant(other))); }) < kTol);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.sub(g.constant(other), v)); }) < kTol);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.mul(v, v)); }) < kTol);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) { return project_sum(g, g.scale(v, -2.5)); }) < kTol);
  // broadcast operand receives the reduced gradient
  CHECK(check_input(other, [&](Graph<double>& g, Var v) { return project_sum(g, g.mul(g.constant(x), v)); }) < kTol);
}

TEST_CASE("shape op gradients") {
  const ArrayD x = randn({2, 3, 4}, 3);
  CHECK(check_input(x, [](Graph<double>& g, Var v) { return project_sum(g, g.permute(v, {2, 0, 1})); }) < kTol);
  CHECK(check_input(x, [](Graph<double>& g, Var v) { return project_sum(g, g.reshape(v, {6, 4})); }) < kTol);
  CHECK(check_input(x, [](Graph<double>& g, Var v) { return project_sum(g, g.slice(v, 2, 1, 2)); }) < kTol);
  CHECK(check_input(x, [](Graph<double>& g, Var v) {
          const Var parts[] = {v, g.scale(v, 2.0)};
          return project_sum(g, g.concat(parts, 1));
        }) < kTol);
  CHECK(check_input(x, [](Graph<double>& g, Var v) { return g.mean(g.mul(v, v)); }) < kTol);
  CHECK(check_input(x, [](Graph<double>& g, Var v) { return g.mean_square(v); }) < kTol);
}

TEST_CASE("matmul, linear, softmax, norms") {
  const ArrayD a = randn({2, 3, 4}, 4);
  const ArrayD b = randn({2, 4, 5}, 5);
  const ArrayD w = randn({6, 4}, 6);
  const ArrayD bias = randn({6}, 7);
  CHECK(check_input(a, [&](Graph<double>& g, Var v) { return project_sum(g, g.matmul(v, g.constant(b))); }) < kTol);
  CHECK(check_input(b, [&](Graph<double>& g, Var v) { return project_sum(g, g.matmul(g.constant(a), v)); }) < kTol);
  CHECK(check_input(a, [&](Graph<double>& g, Var v) {
          return project_sum(g, g.linear(v, g.constant(w), g.constant(bias)));
        }) < kTol);
  CHECK(check_input(w, [&](Graph<double>& g, Var v) {
          return project_sum(g, g.linear(g.constant(a), v, g.constant(bias)));
        }) < kTol);
  CHECK(check_input(a, [](Graph<double>& g, Var v) { return project_sum(g, g.softmax(v)); }) < kTol);
  CHECK(check_input(a, [](Graph<double>& g, Var v) { return project_sum(g, g.layer_norm(v, Var{}, Var{})); }) < kTol);
  const ArrayD x = randn({2, 4, 3}, 8);
  const ArrayD gamma = randn({4}, 9), beta = randn({4}, 10);
  CHECK(check_input(x, [&](Graph<double>& g, Var v) {
          return project_sum(g, g.group_norm(v, g.constant(gamma), g.constant(beta), 2));
        }) < kTol);
  CHECK(check_input(gamma, [&](Graph<double>& g, Var v) {
          return project_sum(g, g.group_norm(g.constant(x), v, g.constant(beta), 2));
        }) < kTol);
}

TEST_CASE("loss gradients") {
  const ArrayD p = randn({3, 4}, 11);
  const ArrayD t = randn({3, 4}, 12);
  ArrayD w({3, 4}, 1.0);
  w[0] = 10.0;
  w[5] = 0.0;
  CHECK(check_input(p, [&](Graph<double>& g, Var v) { return g.weighted_sq_error(v, t, w); }) < kTol);
  const int labels[] = {0, 3, 1};
  CHECK(check_input(p, [&](Graph<double>& g, Var v) { return g.cross_entropy(v, labels); }) < kTol);
  CHECK(check_input(p, [&](Graph<double>& g, Var v) { return project_sum(g, g.affine_const(v, w, t)); }) < kTol);

  Graph<double> g;
  const Var l = g.weighted_sq_error(g.constant(p), t, w);
  double want = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) want += std::pow((t[i] - p[i]) * w[i], 2);
  CHECK(g.value(l)[0] == doctest::Approx(want / 3.0).epsilon(1e-12));
}

TEST_CASE("conv1d matches a direct sum") {
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const ArrayD x = randn({2, 3, 5}, 20);
      const ArrayD w = randn({4, 3, 3}, 21);
      const ArrayD b = randn({4}, 22);
      Graph<double> g;
      const ArrayD y = g.value(g.conv1d(g.constant(x), g.constant(w), g.constant(b), stride, pad));
      const int L = 5, K = 3, Lo = (L + 2 * pad - K) / stride + 1;
      REQUIRE(y.shape() == Shape{2, 4, Lo});
      for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
          for (int t = 0; t < Lo; ++t) {
            double s = b[o];
            for (int c = 0; c < 3; ++c)
              for (int k = 0; k < K; ++k) {
                const int i = t * stride + k - pad;
                if (i >= 0 && i < L) s += w.at({o, c, k}) * x.at({n, c, i});
              }
            CHECK(y.at({n, o, t}) == doctest::Approx(s).epsilon(1e-12));
          }
      CHECK(check_input(x, [&](Graph<double>& h, Var v) {
              return project_sum(h, h.conv1d(v, h.constant(w), h.constant(b), stride, pad));
            }) < kTol);
      CHECK(check_input(w, [&](Graph<double>& h, Var v) {
              return project_sum(h, h.conv1d(h.constant(x), v, h.constant(b), stride, pad));
            }) < kTol);
    }
}

TEST_CASE("conv_transpose1d matches a direct sum") {
  const ArrayD x = randn({2, 3, 2}, 30);
  const ArrayD w = randn({3, 4, 2}, 31);
  const ArrayD b = randn({4}, 32);
  Graph<double> g;
  const ArrayD y = g.value(g.conv_transpose1d(g.constant(x), g.constant(w), g.constant(b)));
  REQUIRE(y.shape() == Shape{2, 4, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int t = 0; t < 3; ++t) {
        double s = b[o];
        for (int c = 0; c < 3; ++c)
          for (int i = 0; i < 2; ++i) {
            const int k = t - i;
            if (k >= 0 && k < 2) s += w.at({c, o, k}) * x.at({n, c, i});
          }
        CHECK(y.at({n, o, t}) == doctest::Approx(s).epsilon(1e-12));
      }
  CHECK(check_input(x, [&](Graph<double>& h, Var v) {
          return project_sum(h, h.conv_transpose1d(v, h.constant(w), h.constant(b)));
        }) < kTol);
  CHECK(check_input(w, [&](Graph<double>& h, Var v) {
          return project_sum(h, h.conv_transpose1d(h.constant(x), v, h.constant(b)));
        }) < kTol);
}

TEST_CASE("gradients accumulate across reuse") {
  Parameter<double> p{"p", ArrayD({3}, std::vector<double>{1, 2, 3}), ArrayD({3})};
  Graph<double> g;
  const Var v = g.param(p);
  g.backward(g.sum(g.add(v, v)));
  CHECK(p.grad == ArrayD({3}, 2.0));
}

TEST_CASE("adam first steps") {
  ParameterStore<double> store;
  Parameter<double>& p = store.add_constant("w", {2}, 1.0);
  Adam<double> opt(store);
  p.grad = ArrayD({2}, std::vector<double>{0.5, -2.0});
  opt.step(0.1);
  // bias-corrected moments equal g and g^2 after one step
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(p.value[1] == doctest::Approx(1.0 + 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  const double before = p.value[1];
  p.grad = ArrayD({2}, std::vector<double>{0.5, 0.0});
  opt.step(0.1);
  const double m = (0.9 * 0.1 * -2.0) / (1 - 0.81);
  const double v = (0.999 * 0.001 * 4.0) / (1 - 0.999 * 0.999);
  CHECK(p.value[1] == doctest::Approx(before - 0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-12));
  CHECK(opt.steps() == 2);
}

TEST_CASE("adam rejects non-finite gradients untouched") {
  ParameterStore<float> store;
  Parameter<float>& a = store.add_constant("a", {1}, 1.0f);
  Parameter<float>& b = store.add_constant("b", {1}, 1.0f);
  Adam<float> opt(store);
  a.grad[0] = 1.0f;
  b.grad[0] = std::nanf("");
  try {
    opt.step(0.1);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumeric);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }
  CHECK(a.value[0] == 1.0f);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(5);
  ParameterStore<float> store;
  store.add("layer.w", {3, 2}, 2, rng);
  store.add("layer.b", {3}, 2, rng);
  Checkpoint c{"{\"kind\":\"test\"}", export_parameters(store)};
  const auto bytes = encode_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "PDPPCKPT");
  const Checkpoint d = decode_checkpoint(bytes);
  CHECK(d.metadata == c.metadata);
  REQUIRE(d.arrays.size() == 2);
  CHECK(d.arrays[0].value == store[0].value);
  CHECK(encode_checkpoint(d) == bytes);

  const auto path = (std::filesystem::temp_directory_path() / "pdpp_numerics.ckpt").string();
  save_checkpoint(path, c);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);

  ParameterStore<float> other;
  Rng r2(9);
  other.add("layer.w", {3, 2}, 2, r2);
  other.add("layer.b", {3}, 2, r2);
  import_parameters(other, d.arrays);
  CHECK(other[1].value == store[1].value);

  ParameterStore<float> wrong;
  wrong.add("layer.w", {2, 3}, 2, r2);
  wrong.add("layer.b", {3}, 2, r2);
  CHECK_THROWS_AS(import_parameters(wrong, d.arrays), Error);

  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(cut), Error);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), Error);
}
