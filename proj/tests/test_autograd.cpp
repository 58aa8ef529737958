#include <cmath>
#include <cstring>
#include <functional>
#include <random>

#include "doctest.h"
#include "gpat/autograd.hpp"
#include "gpat/params.hpp"

using namespace gpat::ag;

namespace {

std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// relu inputs kept at least 0.1 away from the kink
std::vector<double> off_kink(std::size_t n, std::uint64_t seed) {
  auto v = uniform(n, 0.1, 2.0, seed);
  for (std::size_t i = 0; i < n; i += 2) v[i] = -v[i];
  return v;
}

using Inputs = std::vector<std::pair<Shape, std::vector<double>>>;
using Op = std::function<Tensor(const std::vector<Tensor>&)>;

// Single-op finite difference check: loss = sum(op(x...) * w) with a fixed
// random weighting w, so every output entry matters differently.
double op_check(const Inputs& inputs, const Op& op, double step = 1e-6) {
  ParameterStore store;
  for (std::size_t k = 0; k < inputs.size(); ++k) store.add("in" + std::to_string(k), inputs[k].first, inputs[k].second);
  auto args = [&] {
    std::vector<Tensor> xs;
    for (std::size_t k = 0; k < inputs.size(); ++k) xs.push_back(store.get("in" + std::to_string(k)));
    return xs;
  };
  Shape out_shape;
  {
    NoGradScope ng;
    out_shape = op(args()).shape();
  }
  const Tensor w = Tensor::from(out_shape, uniform(shape_numel(out_shape), -1.0, 1.0, 77));
  return finite_difference_check([&] { return sum(op(args()) * w); }, store, step);
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
std::vector<double> grads(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST_CASE("forward examples") {
  CHECK(values(relu(Tensor::from({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  for (double v : values(softmax_lastdim(Tensor::from({3}, {0, 0, 0})))) {
    CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }
  const Tensor m = matmul(Tensor::full({2, 3}, 1.0), Tensor::full({3, 1}, 1.0));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(values(m) == std::vector<double>{3, 3});
}

TEST_CASE("shape and value errors") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4, 3})), ShapeError);
  bool named = false;
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    named = msg.find("matmul") != std::string::npos && msg.find("[2, 3]") != std::string::npos;
  }
  CHECK(named);
  CHECK_THROWS_AS(div(Tensor::full({2}, 1.0), Tensor::from({2}, {1.0, 0.0})), NumericError);
}

TEST_CASE("backward examples") {
  ParameterStore store;
  store.add("x", {3}, {0.5, -1.0, 2.0});
  store.add("y", {2}, {1.0, 2.0});
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor y = store.get("y");
    tape.backward(sum(store.get("x")) + sum(y * y));
  }
  CHECK(grads(store.get("x")) == std::vector<double>{1, 1, 1});
  CHECK(grads(store.get("y")) == std::vector<double>{2, 4});
}

TEST_CASE("backward rejects a non-scalar loss or a foreign loss") {
  ParameterStore store;
  store.add("x", {2}, {1.0, 2.0});
  Tape tape;
  TapeScope scope(tape);
  const Tensor x2 = store.get("x") * store.get("x");
  CHECK_THROWS_AS(tape.backward(x2), ShapeError);
  Tape other;
  CHECK_THROWS_AS(other.backward(sum(x2)), std::logic_error);
}

TEST_CASE("every primitive matches central differences") {
  const double tol = 1e-6;
  const Inputs m23{{{2, 3}, uniform(6, -1, 1, 1)}};
  const Inputs two23{{{2, 3}, uniform(6, -1, 1, 2)}, {{2, 3}, uniform(6, -1, 1, 3)}};

  CHECK(op_check({{{2, 3}, uniform(6, -1, 1, 4)}, {{3, 4}, uniform(12, -1, 1, 5)}},
                 [](const auto& x) { return matmul(x[0], x[1]); }) < tol);
  // batched matmul with a shared right-hand side and with a batched one
  CHECK(op_check({{{2, 2, 3}, uniform(12, -1, 1, 6)}, {{3, 2}, uniform(6, -1, 1, 7)}},
                 [](const auto& x) { return matmul(x[0], x[1]); }) < tol);
  CHECK(op_check({{{2, 2, 3}, uniform(12, -1, 1, 8)}, {{2, 3, 2}, uniform(12, -1, 1, 9)}},
                 [](const auto& x) { return matmul(x[0], x[1]); }) < tol);
  CHECK(op_check(two23, [](const auto& x) { return add(x[0], x[1]); }) < tol);
  CHECK(op_check(two23, [](const auto& x) { return sub(x[0], x[1]); }) < tol);
  CHECK(op_check(two23, [](const auto& x) { return mul(x[0], x[1]); }) < tol);
  CHECK(op_check({{{2, 3}, uniform(6, -1, 1, 10)}, {{2, 3}, uniform(6, 0.5, 2, 11)}},
                 [](const auto& x) { return div(x[0], x[1]); }) < tol);
  // broadcasting over leading axes
  CHECK(op_check({{{2, 3}, uniform(6, -1, 1, 12)}, {{3}, uniform(3, 0.5, 2, 13)}},
                 [](const auto& x) { return mul(x[0], x[1]) + div(x[0], x[1]); }) < tol);
  CHECK(op_check({{{1, 3}, uniform(3, -1, 1, 14)}}, [](const auto& x) { return broadcast(x[0], {4, 3}); }) < tol);
  CHECK(op_check(two23, [](const auto& x) { return concat({x[0], x[1]}, 1); }) < tol);
  CHECK(op_check(two23, [](const auto& x) { return concat({x[0], x[1]}, 0); }) < tol);
  CHECK(op_check({{{2, 3}, off_kink(6, 15)}}, [](const auto& x) { return relu(x[0]); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return softmax_lastdim(scale(x[0], 3.0)); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return sum(x[0]); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return sum(x[0], 0); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return mean(x[0]); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return mean(x[0], 1); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return max(x[0], 1); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return l2norm_lastdim(x[0]); }) < tol);
  CHECK(op_check({{{2, 3}, uniform(6, 0.2, 2, 16)}}, [](const auto& x) { return sqrt(x[0]); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return sin(scale(x[0], 2.0)); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return cos(scale(x[0], 2.0)); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return scale(x[0], -2.5); }) < tol);
  CHECK(op_check(m23, [](const auto& x) { return reshape(x[0], {3, 2}); }) < tol);
  CHECK(op_check({{{2, 3, 2}, uniform(12, -1, 1, 17)}}, [](const auto& x) { return permute(x[0], {2, 0, 1}); }) <
        tol);
  CHECK(op_check({{{4, 3}, uniform(12, -1, 1, 18)}}, [](const auto& x) { return slice(x[0], 0, 1, 2); }) < tol);
  const std::vector<std::size_t> rows{3, 0, 3, 1};
  CHECK(op_check({{{4, 3}, uniform(12, -1, 1, 19)}}, [&](const auto& x) { return index_select(x[0], rows); }) < tol);
}

TEST_CASE("stop_gradient") {
  ParameterStore store;
  store.add("x", {1}, {2.0});
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = store.get("x");
    tape.backward(sum(stop_gradient(x) * x));
  }
  CHECK(grads(store.get("x")) == std::vector<double>{2.0});

  store.add("v", {3}, {1.5, -2.0, 0.25});
  store.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(stop_gradient(store.get("v"))) + sum(store.get("x")));
  }
  const Tensor& v = store.get("v");
  CHECK((!v.has_grad() || grads(v) == std::vector<double>{0, 0, 0}));

  const Tensor frozen = stop_gradient(v);
  CHECK(std::memcmp(frozen.data().data(), v.data().data(), 3 * sizeof(double)) == 0);
  CHECK(!frozen.requires_grad());
}

TEST_CASE("softmax rows sum to one and ignore a constant shift") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 20.0);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> v(12);
    for (double& x : v) x = n(rng);
    const Tensor a = softmax_lastdim(Tensor::from({3, 4}, v));
    for (double& x : v) x += 123.25;
    const Tensor b = softmax_lastdim(Tensor::from({3, 4}, v));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        s += a[4 * r + c];
        CHECK(std::abs(a[4 * r + c] - b[4 * r + c]) < 1e-12);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("tape runs are bitwise deterministic") {
  auto run = [] {
    ParameterStore store;
    std::mt19937_64 rng(8);
    store.add_uniform("w", {4, 5}, 1.0, rng);
    const Tensor x = Tensor::from({3, 4}, uniform(12, -1, 1, 20));
    Tape tape;
    double loss = 0.0;
    {
      TapeScope scope(tape);
      const Tensor l = sum(softmax_lastdim(relu(matmul(x, store.get("w")))));
      loss = l.item();
      tape.backward(l);
    }
    std::vector<double> out = grads(store.get("w"));
    out.push_back(loss);
    return out;
  };
  const auto a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
