#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "usnas/tensor.hpp"

namespace usnas::nn {

// SGD with classical momentum and decoupled-style L2 weight decay applied
// as part of the gradient. Velocity buffers are keyed per parameter.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum = 0.9, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    for (Parameter* p : params) {
      Tensor& v = buffer(p);
      for (long i = 0; i < p->numel(); ++i) {
        const double g = p->grad[i] + weight_decay_ * p->value[i];
        v[i] = momentum_ * v[i] + g;
        p->value[i] -= lr * v[i];
      }
      p->zero_grad();
    }
  }

 private:
  Tensor& buffer(Parameter* p) {
    auto it = velocity_.find(p);
    if (it == velocity_.end())
      it = velocity_.emplace(p, Tensor(p->value.shape())).first;
    return it->second;
  }

  double momentum_;
  double weight_decay_;
  std::map<Parameter*, Tensor> velocity_;
};

class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (Parameter* p : params) {
      State& s = state(p);
      for (long i = 0; i < p->numel(); ++i) {
        const double g = p->grad[i];
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      p->zero_grad();
    }
  }

  long step_count() const { return t_; }

 private:
  struct State {
    Tensor m, v;
  };

  State& state(Parameter* p) {
    auto it = states_.find(p);
    if (it == states_.end())
      it = states_
               .emplace(p, State{Tensor(p->value.shape()),
                                 Tensor(p->value.shape())})
               .first;
    return it->second;
  }

  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<Parameter*, State> states_;
};

// Cosine annealing with warm restarts (period t0 doubling by t_mult).
// epoch is 0-based; the returned rate is constant within an epoch.
inline double cosine_restart_lr(int epoch, double lr_max, double lr_min,
                                int t0, int t_mult) {
  int period = t0;
  int e = epoch;
  while (e >= period) {
    e -= period;
    period *= t_mult;
  }
  const double frac = static_cast<double>(e) / static_cast<double>(period);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * frac));
}

}  // namespace usnas::nn
