#pragma once

#include <cmath>
#include <stdexcept>

#include "hir/model.hpp"

namespace hir {

// Adaptive-moment estimation with bias correction and decoupled weight
// decay. Constant learning rate, no warmup.
template <class Scalar>
struct AdamState {
  VectorX<Scalar> m;
  VectorX<Scalar> v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(Eigen::Index n) {
    AdamState s;
    s.m = VectorX<Scalar>::Zero(n);
    s.v = VectorX<Scalar>::Zero(n);
    return s;
  }
};

// Returns false and leaves everything untouched when the gradients are not
// finite; the caller reports and skips the step.
template <class Scalar>
bool apply_gradients(ModelState<Scalar>& model, AdamState<Scalar>& adam,
                     const VectorX<Scalar>& grad, double lr, double weight_decay) {
  if (grad.size() != model.params.size()) {
    throw std::invalid_argument("gradient shape does not match parameters");
  }
  if (lr < 0.0 || weight_decay < 0.0) {
    throw std::invalid_argument("lr and weight_decay must be non-negative");
  }
  if (!grad.allFinite()) return false;

  const long long t = model.step_count + 1;
  const Scalar b1 = static_cast<Scalar>(adam.beta1);
  const Scalar b2 = static_cast<Scalar>(adam.beta2);
  adam.m = b1 * adam.m + (Scalar(1) - b1) * grad;
  adam.v = b2 * adam.v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const Scalar corr1 = Scalar(1) - static_cast<Scalar>(std::pow(adam.beta1, t));
  const Scalar corr2 = Scalar(1) - static_cast<Scalar>(std::pow(adam.beta2, t));
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar eps = static_cast<Scalar>(adam.epsilon);
  model.params.array() -=
      step * (adam.m.array() / corr1) /
      ((adam.v.array() / corr2).sqrt() + eps);
  if (weight_decay != 0.0) {
    model.params.array() -= step * static_cast<Scalar>(weight_decay) * model.params.array();
  }
  model.step_count = t;
  return true;
}

}  // namespace hir
