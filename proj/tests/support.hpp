#pragma once

// Shared helpers for the unit tests.

#include <algorithm>
#include <cmath>
#include <functional>

#include "aleatoric/random.hpp"
#include "aleatoric/tensor.hpp"

namespace aleatoric::test {

inline Tensor random_tensor(const Shape& shape, RngStream& rng, double scale = 1.0) {
  Tensor t(shape);
  for (auto& v : t.values()) v = scale * (2.0 * rng.uniform() - 1.0);
  return t;
}

/// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true value
/// is ~0 from reporting roundoff as a huge relative error.
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f w.r.t. every entry of x (x restored afterwards).
inline Tensor numeric_gradient(const std::function<double()>& f, Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

}  // namespace aleatoric::test
