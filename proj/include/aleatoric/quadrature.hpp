#pragma once

#include <cstddef>

#include "aleatoric/tensor.hpp"

namespace aleatoric {

struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

/// Gauss-Hermite rule for the weight exp(-x^2) (Golub-Welsch). Weights sum to sqrt(pi).
QuadratureRule gauss_hermite(std::size_t n);

/// E[f(Z)] for Z ~ N(0, 1) with an n-node Gauss-Hermite rule.
template <typename F>
double expect_standard_normal(F&& f, const QuadratureRule& rule) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * f(std::sqrt(2.0) * rule.nodes[i]);
  return acc / std::sqrt(EIGEN_PI);
}

}  // namespace aleatoric
