#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ifs/error.hpp"
#include "ifs/tensor.hpp"

namespace ifs {

// A named trainable tensor with its Adam state. Names are dotted paths,
// unique within one model ("F.conv1.weight").
template <class S>
struct ParameterT {
  std::string name;
  TensorT<S> value;
  std::vector<S> adam_m;
  std::vector<S> adam_v;
  std::int64_t step_count = 0;

  void init(std::string param_name, TensorT<S> v) {
    name = std::move(param_name);
    value = std::move(v);
    value.set_requires_grad(true);
    adam_m.assign(static_cast<std::size_t>(value.numel()), S(0));
    adam_v.assign(static_cast<std::size_t>(value.numel()), S(0));
    step_count = 0;
  }
};

using Parameter = ParameterT<float>;

template <class S>
void zero_grad(const std::vector<ParameterT<S>*>& params) {
  for (auto* p : params) p->value.zero_grad();
}

// Standard Adam with bias correction. Gradients are left untouched; the
// caller owns the reset.
template <class S>
void adam_step(const std::vector<ParameterT<S>*>& params, S lr, S beta1 = S(0.9),
               S beta2 = S(0.999), S eps = S(1e-8)) {
  for (auto* p : params) {
    if (!p->value.has_grad()) {
      throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
    }
    p->step_count += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1),
                                                 static_cast<double>(p->step_count)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2),
                                                 static_cast<double>(p->step_count)));
    S* w = p->value.data();
    const auto& g = p->value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      p->adam_m[i] = beta1 * p->adam_m[i] + (S(1) - beta1) * g[i];
      p->adam_v[i] = beta2 * p->adam_v[i] + (S(1) - beta2) * g[i] * g[i];
      const S m_hat = p->adam_m[i] / bc1;
      const S v_hat = p->adam_v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

// base_lr * 0.5 * (1 + cos(pi * epoch / total_epochs)), annealing to zero.
inline double cosine_lr(double base_lr, double epoch, double total_epochs) {
  if (epoch < 0 || epoch > total_epochs) {
    throw ContractError("cosine_lr: epoch outside [0, total_epochs]");
  }
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * epoch / total_epochs));
}

// Temporarily removes a parameter set from gradient accumulation; forward
// passes recorded while the guard is alive propagate through the frozen
// layers without touching their weights.
template <class S>
class FreezeGuardT {
 public:
  explicit FreezeGuardT(const std::vector<ParameterT<S>*>& params) : params_(params) {
    for (auto* p : params_) {
      saved_.push_back(p->value.requires_grad());
      p->value.set_requires_grad(false);
    }
  }
  ~FreezeGuardT() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i]->value.set_requires_grad(saved_[i]);
    }
  }
  FreezeGuardT(const FreezeGuardT&) = delete;
  FreezeGuardT& operator=(const FreezeGuardT&) = delete;

 private:
  std::vector<ParameterT<S>*> params_;
  std::vector<bool> saved_;
};

using FreezeGuard = FreezeGuardT<float>;

}  // namespace ifs
