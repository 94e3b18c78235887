#include "aleatoric/quadrature.hpp"

#include <Eigen/Eigenvalues>

namespace aleatoric {

QuadratureRule gauss_hermite(std::size_t n) {
  if (n == 0) throw DomainError("gauss_hermite: need at least one node");
  const auto m = static_cast<Eigen::Index>(n);
  // Jacobi matrix of the physicists' Hermite recurrence: off-diagonal sqrt(k / 2).
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index k = 1; k < m; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k) / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
  QuadratureRule rule;
  rule.nodes = solver.eigenvalues();
  rule.weights = std::sqrt(EIGEN_PI) * solver.eigenvectors().row(0).array().square().transpose().matrix();
  return rule;
}

}  // namespace aleatoric
