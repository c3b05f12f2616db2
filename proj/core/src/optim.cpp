#include "defsynth/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace defsynth::optim {

Adam::Adam(nn::ParamStore& store, double beta1, double beta2, double eps)
    : store_(store), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const std::string& name : store.names()) {
    State s;
    s.m = Tensor(store.tensor(name).shape());
    s.v = Tensor(store.tensor(name).shape());
    state_.emplace(name, std::move(s));
  }
}

Adam::State& Adam::state_for(const std::string& name) {
  auto it = state_.find(name);
  if (it == state_.end()) throw std::invalid_argument("Adam: unknown parameter '" + name + "'");
  return it->second;
}

void Adam::step(const ad::GradMap& grads, double lr) {
  for (const std::string& name : store_.names()) {
    ad::Var g = ad::grad_in(grads, store_.get(name));
    if (!g.defined()) continue;
    Tensor p = store_.tensor(name);
    const Tensor& gt = g.value();
    State& s = state_for(name);
    s.t += 1;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
    double* pm = s.m.data();
    double* pv = s.v.data();
    double* pp = p.data();
    const double* pg = gt.data();
    for (int64_t i = 0, n = p.numel(); i < n; ++i) {
      pm[i] = beta1_ * pm[i] + (1.0 - beta1_) * pg[i];
      pv[i] = beta2_ * pv[i] + (1.0 - beta2_) * pg[i] * pg[i];
      const double mhat = pm[i] / bc1;
      const double vhat = pv[i] / bc2;
      pp[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Sgd::step(const ad::GradMap& grads, double lr) {
  for (const std::string& name : store_.names()) {
    ad::Var g = ad::grad_in(grads, store_.get(name));
    if (!g.defined()) continue;
    Tensor p = store_.tensor(name);
    const double* pg = g.value().data();
    double* pp = p.data();
    for (int64_t i = 0, n = p.numel(); i < n; ++i) pp[i] -= lr * pg[i];
  }
}

double linear_lr(int64_t step, int64_t total, double lr_start, double lr_end) {
  if (total <= 1) return lr_start;
  int64_t i = std::min(step, total - 1);
  if (i <= 0) return lr_start;
  if (i == total - 1) return lr_end;
  double frac = static_cast<double>(i) / static_cast<double>(total - 1);
  return lr_start + (lr_end - lr_start) * frac;
}

}  // namespace defsynth::optim
