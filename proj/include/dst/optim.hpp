#pragma once

#include <cmath>
#include <span>
#include <string>

#include "dst/autograd.hpp"

namespace dst {

/// Adam with decoupled weight decay. Moment decays and weight decay are plain
/// defaults; only the 1e-3 learning rate comes from the reference setup.
struct OptimizerConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate", "must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1", "must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2", "must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("optimizer.epsilon", "must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay", "must be >= 0");
  }
};

/// One AdamW update over every parameter, then clears gradients. Throws
/// NumericError before touching any value if a gradient is non-finite.
inline void adam_step(std::span<Parameter* const> params, const OptimizerConfig& cfg) {
  for (const Parameter* p : params)
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in parameter '" + p->name + "'");

  for (Parameter* p : params) {
    ++p->steps;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->steps));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = p->m[i] / bc1;
      const double vhat = p->v[i] / bc2;
      p->value[i] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon) + cfg.weight_decay * p->value[i]);
    }
    p->zero_grad();
  }
}

}  // namespace dst
