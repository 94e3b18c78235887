#pragma once

#include <cmath>
#include <cstddef>

#include "aleatoric/tensor.hpp"

namespace aleatoric {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

void validate(const AdamConfig& config);

/// First and second moment estimates for one parameter tensor.
struct AdamMoments {
  Tensor m;
  Tensor v;

  static AdamMoments zeros_like(const Tensor& param) { return {Tensor(param.shape()), Tensor(param.shape())}; }
};

/// One bias-corrected Adam update at step t >= 1:
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
template <typename Param, typename Grad, typename Moment>
void adam_update(Eigen::DenseBase<Param>& param, const Eigen::DenseBase<Grad>& grad, Eigen::DenseBase<Moment>& m,
                 Eigen::DenseBase<Moment>& v, std::size_t t, const AdamConfig& config) {
  const double t_d = static_cast<double>(t);
  const double m_corr = 1.0 - std::pow(config.beta1, t_d);
  const double v_corr = 1.0 - std::pow(config.beta2, t_d);
  m.derived().array() = config.beta1 * m.derived().array() + (1.0 - config.beta1) * grad.derived().array();
  v.derived().array() =
      config.beta2 * v.derived().array() + (1.0 - config.beta2) * grad.derived().array().square();
  param.derived().array() -= config.learning_rate * (m.derived().array() / m_corr) /
                             ((v.derived().array() / v_corr).sqrt() + config.epsilon);
}

/// Tensor front end: checks shapes and t, then applies adam_update.
void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments, std::size_t t, const AdamConfig& config);

}  // namespace aleatoric
