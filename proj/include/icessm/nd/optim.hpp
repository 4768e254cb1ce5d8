#pragma once

#include <cstdint>

#include "icessm/nd/params.hpp"

namespace icessm::nd {

struct AdamWOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

/// AdamW with decoupled weight decay. Decay applies to tensors of rank >= 2;
/// biases, norm affines and gains are not decayed.
class AdamW {
 public:
  AdamW(const ParamSet& params, AdamWOptions options = {});

  void step(ParamSet& params, const ParamSet& grads);

  std::int64_t steps() const noexcept { return steps_; }
  const AdamWOptions& options() const noexcept { return options_; }
  void set_lr(float lr) { options_.lr = lr; }

 private:
  AdamWOptions options_;
  ParamSet m_;
  ParamSet v_;
  std::int64_t steps_ = 0;
};

}  // namespace icessm::nd
