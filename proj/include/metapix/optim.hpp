#pragma once

#include "metapix/params.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

namespace metapix {

struct AdamConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates keyed by parameter name.
template <class Scalar>
struct AdamState {
  using Vector = typename Tensor<Scalar>::Vector;

  AdamConfig config;
  long step = 0;
  std::map<std::string, Vector> m;
  std::map<std::string, Vector> v;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

/// One bias-corrected Adam update. Every parameter must carry a gradient;
/// gradients are cleared afterwards.
template <class Scalar>
void adam_step(ParamSet<Scalar>& params, AdamState<Scalar>& state, double lr) {
  using Vector = typename Tensor<Scalar>::Vector;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
  }
  ++state.step;
  const Scalar b1 = Scalar(state.config.beta1);
  const Scalar b2 = Scalar(state.config.beta2);
  const Scalar eps = Scalar(state.config.epsilon);
  const Scalar c1 = Scalar(1) / Scalar(1 - std::pow(state.config.beta1, double(state.step)));
  const Scalar c2 = Scalar(1) / Scalar(1 - std::pow(state.config.beta2, double(state.step)));
  const Scalar step_size = Scalar(lr);
  for (auto& [name, p] : params) {
    const Vector& g = p.grad();
    auto [mit, m_new] = state.m.try_emplace(name, Vector::Zero(p.size()));
    auto [vit, v_new] = state.v.try_emplace(name, Vector::Zero(p.size()));
    Vector& m = mit->second;
    Vector& v = vit->second;
    if (m.size() != p.size() || v.size() != p.size()) {
      throw std::invalid_argument("adam_step: state for '" + name + "' is not congruent with the parameter");
    }
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    p.data().array() -= step_size * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
    p.clear_grad();
  }
}

/// Constant learning rate for the first ceil(T/2) steps, then a linear ramp
/// that would reach zero at step T.
struct LrSchedule {
  double base_lr = 0.0002;
  long total_steps = 1;

  LrSchedule(double base, long total) : base_lr(base), total_steps(total) {
    if (!(base_lr >= 0) || total_steps < 1) {
      throw std::invalid_argument("LrSchedule needs base_lr >= 0 and total_steps >= 1");
    }
  }
};

inline double lr_at(const LrSchedule& schedule, long step) {
  const long total = schedule.total_steps;
  if (step < 0 || step >= total) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  }
  const long constant_steps = (total + 1) / 2;
  if (step < constant_steps) return schedule.base_lr;
  return schedule.base_lr * double(total - step) / double(total - constant_steps);
}

/// Meta step size, linearly decayed from eps0 to zero over the meta run.
inline double meta_lr_at(double eps0, long meta_step, long total_meta_steps) {
  if (total_meta_steps < 1 || meta_step < 0 || meta_step >= total_meta_steps) {
    throw std::out_of_range("meta_lr_at: step " + std::to_string(meta_step) + " outside [0, " +
                            std::to_string(total_meta_steps) + ")");
  }
  return eps0 * (1.0 - double(meta_step) / double(total_meta_steps));
}

/// Moves `base` toward `adapted`: p' = (1 - eps) p + eps p~.
///
/// With `literal_sign` the step goes the other way, p' = p - eps (p~ - p).
template <class Scalar>
ParamSet<Scalar> reptile_update(const ParamSet<Scalar>& base, const ParamSet<Scalar>& adapted, double eps,
                                bool literal_sign = false) {
  if (!base.congruent(adapted)) throw std::invalid_argument("reptile_update: parameter sets are not congruent");
  if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("reptile_update: eps must lie in [0, 1]");
  const Scalar e = Scalar(eps);
  ParamSet<Scalar> out;
  for (const auto& [name, p] : base) {
    const auto& q = adapted.at(name).data();
    typename Tensor<Scalar>::Vector next;
    if (literal_sign) next = (Scalar(1) + e) * p.data() - e * q;
    else if (eps == 0.0) next = p.data();
    else if (eps == 1.0) next = q;
    else next = (Scalar(1) - e) * p.data() + e * q;
    out.add(name, Tensor<Scalar>(p.shape(), std::move(next)));
  }
  return out;
}

}  // namespace metapix
