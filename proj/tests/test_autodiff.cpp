#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "support.hpp"
#include "zsd/autodiff.hpp"
#include "zsd/signal.hpp"

using namespace zsd;
using namespace zsd::ad;

namespace {

ParamVector flat(std::vector<double> values) {
  ParamVector p;
  p.append("x", 1, static_cast<int>(values.size()));
  p.values = std::move(values);
  return p;
}

ParamVector random_params(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return flat(std::move(v));
}

// Contracts an arbitrary output with fixed random weights so every output
// element receives a distinct gradient.
Var contract(Tape& tape, Var out, std::uint64_t seed = 77) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor w(out.rows(), out.cols());
  for (auto& v : w.data) v = u(rng);
  return sum(mul(out, tape.constant(std::move(w))));
}

void check_against_fd(const LossFn& fn, const ParamVector& params, double eps = 1e-6, double tol = 1e-6) {
  const GradientEvaluation ev = evaluate_with_gradients(fn, params);
  const std::vector<double> fd = finite_difference_gradient(fn, params, eps);
  REQUIRE(ev.gradient.size() == fd.size());
  double scale = 1e-8;
  for (double g : fd) scale = std::max(scale, std::abs(g));
  for (std::size_t i = 0; i < fd.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(ev.gradient[i] - fd[i]) / scale < tol);
  }
}

}  // namespace

TEST_CASE("quadratic and softplus hand examples") {
  const LossFn sq = [](Tape&, Var p) { return sum(mul(p, p)); };
  const auto ev = evaluate_with_gradients(sq, flat({1.0, -2.0, 3.0}));
  CHECK(ev.loss == 14.0);
  CHECK(ev.gradient == std::vector<double>{2.0, -4.0, 6.0});

  const LossFn sp = [](Tape&, Var p) { return sum(softplus(p)); };
  const auto ev2 = evaluate_with_gradients(sp, flat({0.0}));
  CHECK(ev2.loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(ev2.gradient[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("finite differences on scalar examples") {
  const LossFn sq = [](Tape&, Var p) { return sum(mul(p, p)); };
  CHECK(std::abs(finite_difference_gradient(sq, flat({3.0}), 1e-4)[0] - 6.0) < 1e-6);
  const LossFn ab = [](Tape&, Var p) { return sum(abs(p)); };
  CHECK(finite_difference_gradient(ab, flat({1.0}), 1e-4)[0] == doctest::Approx(1.0));
  const std::vector<std::size_t> coords{1};
  const auto sub = finite_difference_gradient(sq, flat({1.0, 5.0}), 1e-4, coords);
  REQUIRE(sub.size() == 1);
  CHECK(sub[0] == doctest::Approx(10.0).epsilon(1e-8));
}

TEST_CASE("abs uses subgradient zero at the kink") {
  const LossFn ab = [](Tape&, Var p) { return sum(abs(p)); };
  const auto ev = evaluate_with_gradients(ab, flat({0.0, -2.0, 2.0}));
  CHECK(ev.gradient == std::vector<double>{0.0, -1.0, 1.0});
  const LossFn l1 = [](Tape& t, Var p) { return l1_mean(p, t.constant(Tensor(1, 2, {0.5, 1.0}))); };
  const auto ev2 = evaluate_with_gradients(l1, flat({0.5, 3.0}));
  CHECK(ev2.gradient == std::vector<double>{0.0, 0.5});
}

TEST_CASE("elementwise and reduction primitives") {
  const auto p = random_params(12, 1);
  check_against_fd([](Tape& t, Var x) {
    Var a = slice(x, 0, 2, 3), b = slice(x, 6, 2, 3);
    return contract(t, add(mul(a, b), sub(scale(a, 1.7), b)));
  }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, add_scalar(slice(x, 0, 3, 3), slice(x, 9, 1, 1))); }, p);
  check_against_fd([](Tape&, Var x) { return scale(mean(mul(x, x)), 3.0); }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, softplus(scale(x, 4.0))); }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, reshape(x, 3, 4)); }, p);
}

TEST_CASE("clamp_max passes gradient only below the cap") {
  const LossFn fn = [](Tape&, Var x) { return sum(clamp_max(x, 0.5)); };
  const auto ev = evaluate_with_gradients(fn, flat({0.2, 0.9}));
  CHECK(ev.loss == doctest::Approx(0.7));
  CHECK(ev.gradient == std::vector<double>{1.0, 0.0});
}

TEST_CASE("matmul, attention and layer norm") {
  const auto p = random_params(5 * 4 + 4 * 3, 2);
  check_against_fd([](Tape& t, Var x) { return contract(t, matmul(slice(x, 0, 5, 4), slice(x, 20, 4, 3))); }, p);

  const auto q = random_params(3 * 6 * 4, 3);
  check_against_fd([](Tape& t, Var x) {
    return contract(t, attention(slice(x, 0, 6, 4), slice(x, 24, 6, 4), slice(x, 48, 6, 4)));
  }, q);

  const auto ln = random_params(5 * 4 + 8, 4);
  check_against_fd([](Tape& t, Var x) {
    return contract(t, layer_norm_rows(slice(x, 0, 5, 4), slice(x, 20, 1, 4), slice(x, 24, 1, 4), 1e-5));
  }, ln, 1e-6, 1e-5);
}

TEST_CASE("structural primitives: gather, permute, patches, downsample, convolution") {
  const auto p = random_params(8 * 8, 5, 0.0, 1.0);
  check_against_fd([](Tape& t, Var x) { return contract(t, gather(reshape(x, 8, 8), {3, 3, 10, 63, 0, 1}, 2, 3)); }, p);
  check_against_fd([](Tape& t, Var x) {
    Var img = reshape(x, 8, 8);
    return contract(t, permute(img, els_permutation(img.value().to_image())));
  }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, extract_patches(reshape(x, 8, 8), 4)); }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, downsample(reshape(x, 8, 8), Downsample::g1)); }, p);
  check_against_fd([](Tape& t, Var x) { return contract(t, downsample(reshape(x, 8, 8), Downsample::g2)); }, p);
  check_against_fd([](Tape& t, Var x) {
    return contract(t, convolve_separable(reshape(x, 8, 8), gaussian_kernel_1d(1.5)));
  }, p);
}

TEST_CASE("bilateral gradients with respect to image and sigmas") {
  // 16x16 image, 2x2 grid of 8x8 patches, then r, x, y maps.
  std::vector<double> v = random_params(256, 6, 0.0, 1.0).values;
  for (double s : {0.3, 0.2, 0.5, 0.25}) v.push_back(s);
  for (double s : {1.1, 0.6, 1.4, 0.9}) v.push_back(s);
  for (double s : {0.8, 1.3, 0.7, 1.0}) v.push_back(s);
  const ParamVector p = flat(v);
  std::vector<int> k;
  for (int i = 0; i < 4; ++i) k.push_back(2 * static_cast<int>(std::ceil(std::max(v[260 + i], v[264 + i]) + 1)));
  check_against_fd([k](Tape& t, Var x) {
    Var out = bilateral(reshape(slice(x, 0, 1, 256), 16, 16), slice(x, 256, 2, 2), slice(x, 260, 2, 2),
                        slice(x, 264, 2, 2), 8, k);
    return contract(t, out);
  }, p, 1e-6, 1e-6);
}

TEST_CASE("an ignored segment gets an exactly zero gradient") {
  ParamVector p;
  p.append("used", 1, 3);
  p.append("ignored", 2, 2);
  p.values = {0.1, 0.2, 0.3, 1, 2, 3, 4};
  const LossFn fn = [](Tape&, Var x) { return sum(softplus(slice(x, 0, 1, 3))); };
  const auto ev = evaluate_with_gradients(fn, p);
  for (std::size_t i = 3; i < 7; ++i) CHECK(ev.gradient[i] == 0.0);
  CHECK(p.segment("ignored").offset == 3);
  CHECK_THROWS(p.segment("missing"));
}

TEST_CASE("evaluation is deterministic") {
  const auto p = random_params(64 + 12, 8, 0.1, 1.0);
  const LossFn fn = [](Tape& t, Var x) {
    Var img = reshape(slice(x, 0, 1, 64), 8, 8);
    Var out = bilateral(img, slice(x, 64, 1, 1), slice(x, 65, 1, 1), slice(x, 66, 1, 1), 8, {4});
    return contract(t, convolve_separable(out, gaussian_kernel_1d(2.0)));
  };
  const auto a = evaluate_with_gradients(fn, p);
  const auto b = evaluate_with_gradients(fn, p);
  CHECK(a.loss == b.loss);
  CHECK(a.gradient == b.gradient);
}

TEST_CASE("non-finite values name the primitive") {
  const LossFn fn = [](Tape& t, Var x) { return sum(mul(x, t.constant(Tensor(1, 1, {INFINITY})))); };
  try {
    evaluate_with_gradients(fn, flat({1.0}));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.primitive() == "mul");
  }
}

TEST_CASE("constant sub-graphs record no backward work") {
  Tape tape;
  Var c = tape.constant(Tensor(2, 2, 1.0));
  Var d = mul(c, c);
  CHECK_FALSE(d.requires_grad());
  Var v = tape.variable(Tensor(2, 2, 2.0));
  Var e = sum(mul(v, d));
  tape.backward(e);
  CHECK(tape.grad(v) == Tensor(2, 2, 1.0));
  CHECK(tape.grad(c) == Tensor(2, 2, 0.0));
}
