#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "hir/optimizer.hpp"
#include "test_util.hpp"

using namespace hir;
using namespace hir_test;

namespace {

ModelState<double> scalar_model() {
  // a real model is overkill for optimizer math; a 1-parameter stub suffices
  ModelState<double> m;
  m.config = tiny_config(4, 4, 1, 1);
  m.params = VectorX<double>::Constant(1, 1.0);
  return m;
}

}  // namespace

TEST_CASE("zero gradients leave parameters unchanged except the step count") {
  auto model = ModelState<double>::init(tiny_config(12), 1);
  const auto before = model.params;
  auto adam = AdamState<double>::init(model.params.size());
  const VectorX<double> zero = VectorX<double>::Zero(model.params.size());
  CHECK(apply_gradients(model, adam, zero, 5e-4, 0.0));
  CHECK(model.params == before);
  CHECK(model.step_count == 1);
}

TEST_CASE("first step moves a unit-gradient parameter by about lr") {
  auto model = scalar_model();
  auto adam = AdamState<double>::init(1);
  const double lr = 5e-4;
  const VectorX<double> one = VectorX<double>::Constant(1, 1.0);
  CHECK(apply_gradients(model, adam, one, lr, 0.0));
  // bias-corrected first step: delta = lr * 1 / (1 + eps)
  const double expected = 1.0 - lr * (1.0 / (1.0 + adam.epsilon));
  CHECK(model.params(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::abs((1.0 - model.params(0)) - lr) < 1e-9);
  CHECK(model.step_count == 1);
}

TEST_CASE("zero learning rate is a no-op on parameters") {
  auto model = ModelState<double>::init(tiny_config(12), 2);
  const auto before = model.params;
  auto adam = AdamState<double>::init(model.params.size());
  VectorX<double> grad = VectorX<double>::Constant(model.params.size(), 0.25);
  CHECK(apply_gradients(model, adam, grad, 0.0, 0.0));
  CHECK(model.params == before);
  CHECK(model.step_count == 1);
}

TEST_CASE("non-finite gradients are rejected without touching state") {
  auto model = scalar_model();
  auto adam = AdamState<double>::init(1);
  VectorX<double> grad = VectorX<double>::Constant(1, std::numeric_limits<double>::quiet_NaN());
  CHECK_FALSE(apply_gradients(model, adam, grad, 5e-4, 0.0));
  CHECK(model.params(0) == 1.0);
  CHECK(model.step_count == 0);
  CHECK(adam.m(0) == 0.0);
}

TEST_CASE("gradient shape mismatches throw") {
  auto model = scalar_model();
  auto adam = AdamState<double>::init(1);
  const VectorX<double> wrong = VectorX<double>::Zero(2);
  CHECK_THROWS_AS(apply_gradients(model, adam, wrong, 5e-4, 0.0), std::invalid_argument);
}

TEST_CASE("decoupled weight decay shrinks parameters") {
  auto model = scalar_model();
  auto adam = AdamState<double>::init(1);
  const VectorX<double> zero = VectorX<double>::Zero(1);
  CHECK(apply_gradients(model, adam, zero, 0.1, 0.5));
  CHECK(model.params(0) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
}

TEST_CASE("repeated steps with a constant gradient descend monotonically") {
  auto model = scalar_model();
  auto adam = AdamState<double>::init(1);
  double prev = model.params(0);
  for (int i = 0; i < 50; ++i) {
    const VectorX<double> one = VectorX<double>::Constant(1, 1.0);
    CHECK(apply_gradients(model, adam, one, 1e-2, 0.0));
    CHECK(model.params(0) < prev);
    prev = model.params(0);
  }
  CHECK(model.step_count == 50);
}
