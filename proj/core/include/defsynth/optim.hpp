#pragma once

#include "defsynth/autodiff.hpp"
#include "defsynth/nn.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>

namespace defsynth::optim {

namespace ad = defsynth::ad;

/// Adam over every parameter in a store. Parameters absent from a step's
/// gradient map are left untouched, state included.
class Adam {
 public:
  Adam(nn::ParamStore& store, double beta1, double beta2, double eps = 1e-8);

  void step(const ad::GradMap& grads, double lr);

  /// Per-parameter state, exposed for checkpointing.
  struct State {
    Tensor m;
    Tensor v;
    int64_t t = 0;
  };
  const std::unordered_map<std::string, State>& state() const { return state_; }
  State& state_for(const std::string& name);

  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }

 private:
  nn::ParamStore& store_;
  double beta1_, beta2_, eps_;
  std::unordered_map<std::string, State> state_;
};

/// Plain gradient descent.
class Sgd {
 public:
  explicit Sgd(nn::ParamStore& store) : store_(store) {}
  void step(const ad::GradMap& grads, double lr);

 private:
  nn::ParamStore& store_;
};

/// Linear interpolation from lr_start (step 0) to lr_end (step total-1).
double linear_lr(int64_t step, int64_t total, double lr_start, double lr_end);

}  // namespace defsynth::optim
