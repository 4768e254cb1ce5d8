#include "icessm/nd/optim.hpp"

#include <cmath>

#include "icessm/error.hpp"

namespace icessm::nd {

AdamW::AdamW(const ParamSet& params, AdamWOptions options)
    : options_(options), m_(params.zeros_like()), v_(params.zeros_like()) {}

void AdamW::step(ParamSet& params, const ParamSet& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ShapeError("adamw: parameter set layout changed");
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(options_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(options_.beta2), static_cast<double>(steps_));
  const float lr = options_.lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    if (g.size() != p.size()) throw ShapeError("adamw: gradient shape mismatch for " + params.name(i));
    const bool decay = p.rank() >= 2 && options_.weight_decay != 0.0f;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0f - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0f - options_.beta2) * g[k] * g[k];
      if (lr == 0.0f) continue;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      if (decay) p[k] -= lr * options_.weight_decay * p[k];
      p[k] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

}  // namespace icessm::nd
