#include <doctest.h>

#include <defsynth/optim.hpp>

#include <cmath>
#include <random>

using defsynth::Tensor;
namespace ad = defsynth::ad;
namespace nn = defsynth::nn;
using defsynth::optim::Adam;
using defsynth::optim::Sgd;
using defsynth::optim::linear_lr;

TEST_CASE("adam first step moves by roughly lr in the gradient direction") {
  nn::ParamStore store;
  store.create("p", Tensor::from_vector({2}, {1.0, -2.0}));
  Adam opt(store, 0.5, 0.999);

  ad::Var p = store.get("p");
  ad::GradMap grads = ad::backward(ad::sum_all(ad::mul_const(p, Tensor::from_vector({2}, {3.0, -4.0}))));
  opt.step(grads, 0.01);

  // Bias-corrected first step: mhat = g, vhat = g^2, so delta = -lr * sign(g).
  CHECK(store.tensor("p").at(0) == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(store.tensor("p").at(1) == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(opt.state().at("p").t == 1);
}

TEST_CASE("adam converges on a separable quadratic") {
  nn::ParamStore store;
  store.create("p", Tensor::from_vector({3}, {5.0, -3.0, 0.5}));
  Adam opt(store, 0.9, 0.999);
  Tensor target = Tensor::from_vector({3}, {1.0, 2.0, -1.0});

  for (int i = 0; i < 400; ++i) {
    ad::Var p = store.get("p");
    ad::Var diff = ad::sub(p, ad::constant(target));
    ad::GradMap grads = ad::backward(ad::sum_all(ad::square(diff)));
    opt.step(grads, 0.05);
  }
  for (int64_t i = 0; i < 3; ++i)
    CHECK(store.tensor("p").at(i) == doctest::Approx(target.at(i)).epsilon(1e-3));
}

TEST_CASE("parameters without gradients keep value and state") {
  nn::ParamStore store;
  store.create("used", Tensor::from_vector({1}, {1.0}));
  store.create("idle", Tensor::from_vector({1}, {7.0}));
  Adam opt(store, 0.5, 0.999);

  ad::GradMap grads = ad::backward(ad::sum_all(ad::square(store.get("used"))));
  opt.step(grads, 0.1);

  CHECK(store.tensor("idle").at(0) == 7.0);
  CHECK(opt.state().at("idle").t == 0);
  CHECK(opt.state().at("used").t == 1);
}

TEST_CASE("sgd takes an exact gradient step") {
  nn::ParamStore store;
  store.create("p", Tensor::from_vector({2}, {1.0, 2.0}));
  Sgd opt(store);

  ad::Var p = store.get("p");
  ad::GradMap grads = ad::backward(ad::sum_all(ad::square(p)));
  opt.step(grads, 0.25);
  CHECK(store.tensor("p").at(0) == doctest::Approx(1.0 - 0.25 * 2.0).epsilon(1e-12));
  CHECK(store.tensor("p").at(1) == doctest::Approx(2.0 - 0.25 * 4.0).epsilon(1e-12));
}

TEST_CASE("learning rate ramps linearly between endpoints") {
  const double lo = 1e-6, hi = 2e-4;
  CHECK(linear_lr(0, 2000, hi, lo) == hi);
  CHECK(linear_lr(1999, 2000, hi, lo) == lo);
  CHECK(linear_lr(5000, 2000, hi, lo) == lo);
  double mid = linear_lr(1000, 2001, hi, lo);
  CHECK(mid == doctest::Approx((hi + lo) / 2).epsilon(1e-12));
  CHECK(linear_lr(0, 1, hi, lo) == hi);
}
