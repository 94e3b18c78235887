#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "aleatoric/bayes_head.hpp"
#include "aleatoric/quadrature.hpp"
#include "support.hpp"

using namespace aleatoric;

namespace {

BayesHeadParams make_head(std::size_t d, RngStream& rng, double log_var_bias = 0.0, std::size_t noise_dims = 1) {
  BayesHeadParams p;
  p.logits = {test::random_tensor({2, d}, rng), test::random_tensor({2}, rng)};
  p.log_variance = {test::random_tensor({noise_dims, d}, rng, 0.1), Tensor::filled({noise_dims}, log_var_bias)};
  return p;
}

// Head whose logits are exactly `z` and whose sigma is exactly `sigma` (x = 0).
BayesHeadParams fixed_head(double z0, double z1, double sigma) {
  BayesHeadParams p;
  p.logits = {Tensor({2, 1}), Tensor({2}, {z0, z1})};
  p.log_variance = {Tensor({1, 1}), Tensor({1}, {2.0 * std::log(sigma)})};
  return p;
}

double plain_ce(double z0, double z1, std::size_t label) {
  const double m = std::max(z0, z1);
  const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
  return lse - (label == 0 ? z0 : z1);
}

// -log E[softmax(z + sigma eps)[y]], eps ~ N(0, I_2), by a 64 x 64 tensor rule.
double quadrature_loss(double z0, double z1, double sigma, std::size_t y) {
  static const QuadratureRule rule = gauss_hermite(64);
  const double e = expect_standard_normal(
      [&](double a) {
        return expect_standard_normal(
            [&](double b) {
              const double l0 = z0 + sigma * a, l1 = z1 + sigma * b;
              const double other = y == 0 ? l1 - l0 : l0 - l1;
              return 1.0 / (1.0 + std::exp(other));
            },
            rule);
      },
      rule);
  return -std::log(e);
}

struct McEstimate {
  double loss;
  double standard_error;
};

// Loss from the library plus a delta-method standard error from the same draws.
McEstimate mc_loss(const BayesHeadParams& head, std::size_t label, std::size_t samples, RngStream& rng) {
  const Vector x = Vector::Zero(1);
  const Matrix c = mc_corrupt_logits(x, head, samples, rng);
  double sum = 0.0, sum_sq = 0.0;
  for (Eigen::Index t = 0; t < c.rows(); ++t) {
    const double p = softmax(Vector(c.row(t).transpose()))(static_cast<Eigen::Index>(label));
    sum += p;
    sum_sq += p * p;
  }
  const double n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  return {bayes_ce_loss(c, label), std::sqrt(var / n) / mean};
}

}  // namespace

TEST_CASE("sigma_of") {
  RngStream rng(1);
  const Vector x = Vector::Random(4);
  BayesHeadParams p = make_head(4, rng);
  p.log_variance.weights = Tensor({1, 4});
  CHECK(sigma_of(x, p) == 1.0);
  p.log_variance.bias[0] = -40.0;
  CHECK(sigma_of(x, p) == doctest::Approx(2.061153622438558e-9).epsilon(1e-12));
  CHECK(sigma_of(x, p) > 0.0);
  RngStream a(2);
  const BayesHeadParams q = make_head(4, rng);
  CHECK(predict(x, q, 5, a).aleatoric_variance == sigma_of(x, q) * sigma_of(x, q));
  CHECK_THROWS_AS(sigma_of(x, make_head(4, rng, 0.0, 2)), DimensionError);
}

TEST_CASE("mc_corrupt_logits: degenerate and moments") {
  RngStream rng(3);
  const BayesHeadParams zero = fixed_head(0.3, -1.2, 1e-300);
  const Matrix same = mc_corrupt_logits(Vector::Zero(1), zero, 7, rng);
  for (Eigen::Index t = 0; t < 7; ++t) {
    CHECK(same(t, 0) == 0.3);
    CHECK(same(t, 1) == -1.2);
  }
  CHECK_THROWS_AS(mc_corrupt_logits(Vector::Zero(1), zero, 0, rng), DomainError);

  const double sigma = 0.8;
  const std::size_t T = 100000;
  const Matrix c = mc_corrupt_logits(Vector::Zero(1), fixed_head(0.3, -1.2, sigma), T, rng);
  const double z[2] = {0.3, -1.2};
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double mean = c.col(k).mean();
    const double var = (c.col(k).array() - mean).square().sum() / static_cast<double>(T - 1);
    CHECK(std::abs(mean - z[k]) < 4.0 * sigma / std::sqrt(static_cast<double>(T)));
    CHECK(std::abs(var / (sigma * sigma) - 1.0) < 0.05);
  }
}

TEST_CASE("bayes_ce_loss: examples and errors") {
  CHECK(bayes_ce_loss(Matrix::Zero(1, 2), 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(bayes_ce_loss(Matrix::Zero(1, 2), 2), DomainError);
  RngStream rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const double z0 = 3.0 * (2.0 * rng.uniform() - 1.0), z1 = 3.0 * (2.0 * rng.uniform() - 1.0);
    Matrix rows(5, 2);
    rows.col(0).setConstant(z0);
    rows.col(1).setConstant(z1);
    CHECK(std::abs(bayes_ce_loss(rows, 1) - plain_ce(z0, z1, 1)) < 1e-12);
    Vector v(2);
    v << z0, z1;
    CHECK(std::abs(cross_entropy(v, 0) - plain_ce(z0, z1, 0)) < 1e-12);
  }
  // Large logits stay finite.
  Matrix big(2, 2);
  big << 1000, -1000, 900, -900;
  CHECK(std::isfinite(bayes_ce_loss(big, 1)));
  CHECK(bayes_ce_loss(big, 1) == doctest::Approx(1800.0 + std::log(2.0) - std::log1p(std::exp(-200.0))));
}

TEST_CASE("degeneracy: pinned sigma reproduces cross-entropy") {
  RngStream rng(5);
  for (std::size_t T : {1, 10, 100}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Vector x = Vector::Random(6);
      const BayesHeadParams p = make_head(6, rng, -100.0);
      const Vector z = head_logits(x, p);
      for (std::size_t y : {0, 1}) {
        const double bayes = bayes_ce_loss(mc_corrupt_logits(x, p, T, rng), y);
        CHECK(std::abs(bayes - cross_entropy(z, y)) < 1e-10);
      }
    }
  }
}

TEST_CASE("MC loss agrees with the quadrature oracle") {
  RngStream rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    const double z0 = 2.0 * (2.0 * rng.uniform() - 1.0), z1 = 2.0 * (2.0 * rng.uniform() - 1.0);
    const double sigma = 0.2 + 1.8 * rng.uniform();
    const std::size_t y = rng.uniform() < 0.5 ? 0 : 1;
    const McEstimate mc = mc_loss(fixed_head(z0, z1, sigma), y, 100000, rng);
    CAPTURE(sigma);
    CHECK(std::abs(mc.loss - quadrature_loss(z0, z1, sigma, y)) < 3.0 * mc.standard_error);
  }
  // One instance at 1e6 draws, sigma 0.7.
  const McEstimate big = mc_loss(fixed_head(0.4, -0.9, 0.7), 1, 1000000, rng);
  CHECK(std::abs(big.loss - quadrature_loss(0.4, -0.9, 0.7, 1)) < 3.0 * big.standard_error);
}

TEST_CASE("MC estimator variance falls as 1/T") {
  RngStream rng(7);
  const BayesHeadParams head = fixed_head(0.5, -0.5, 1.5);
  std::vector<double> log_t, log_var;
  for (std::size_t T : {100, 1000, 10000}) {
    const int reps = 300;
    double sum = 0.0, sum_sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double l = bayes_ce_loss(mc_corrupt_logits(Vector::Zero(1), head, T, rng), 0);
      sum += l;
      sum_sq += l * l;
    }
    const double mean = sum / reps;
    log_t.push_back(std::log(static_cast<double>(T)));
    log_var.push_back(std::log((sum_sq - reps * mean * mean) / (reps - 1)));
  }
  const double mt = (log_t[0] + log_t[1] + log_t[2]) / 3.0, mv = (log_var[0] + log_var[1] + log_var[2]) / 3.0;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i) {
    num += (log_t[i] - mt) * (log_var[i] - mv);
    den += (log_t[i] - mt) * (log_t[i] - mt);
  }
  const double slope = num / den;
  CAPTURE(slope);
  CHECK(slope >= -1.3);
  CHECK(slope <= -0.7);
}

TEST_CASE("oracle loss is non-decreasing in sigma for a correct margin") {
  double prev = -1.0;
  for (double sigma : {1e-9, 0.5, 1.0, 2.0}) {
    const double l = quadrature_loss(1.5, -0.5, sigma, 0);
    CHECK(l >= prev);
    prev = l;
  }
}

TEST_CASE("combined_loss composition") {
  RngStream rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector x = Vector::Random(5);
    const BayesHeadParams p = make_head(5, rng);
    const std::size_t y = rep % 2;
    RngStream a(100 + rep), b(100 + rep);
    const double total = combined_loss(x, y, p, 50, a, {0.2, 1.0});
    const double parts =
        0.2 * bayes_ce_loss(mc_corrupt_logits(x, p, 50, b), y) + 1.0 * cross_entropy(head_logits(x, p), y);
    CHECK(std::abs(total - parts) < 1e-12);

    RngStream c(1);
    CHECK(combined_loss(x, y, p, 50, c, {0.0, 1.0}) == cross_entropy(head_logits(x, p), y));
    const BayesHeadParams pinned = make_head(5, rng, -100.0);
    RngStream d(2);
    CHECK(std::abs(combined_loss(x, y, pinned, 20, d) - 1.2 * cross_entropy(head_logits(x, pinned), y)) < 1e-12);
  }
  RngStream e(3);
  CHECK_THROWS_AS(combined_loss(Vector::Zero(5), 0, make_head(5, rng), 5, e, {-0.1, 1.0}), DomainError);
}

TEST_CASE("predict") {
  RngStream rng(9);
  const Vector x = Vector::Random(3);
  const BayesHeadParams pinned = make_head(3, rng, -1000.0);
  RngStream a(1);
  const Prediction p0 = predict(x, pinned, 10, a);
  const Vector direct = softmax(head_logits(x, pinned));
  // The mean of 10 equal terms can be off in the last bit; one term cannot.
  CHECK(std::abs(p0.probs(0) - direct(0)) < 1e-15);
  CHECK(std::abs(p0.probs(1) - direct(1)) < 1e-15);
  RngStream one(1);
  CHECK(predict(x, pinned, 1, one).probs == direct);
  CHECK(p0.aleatoric_variance == 0.0);
  CHECK(p0.mc_samples == 10);

  for (int rep = 0; rep < 20; ++rep) {
    const BayesHeadParams p = make_head(3, rng, 1.0);
    RngStream s(rep);
    const Prediction pr = predict(Vector::Random(3), p, 30, s);
    CHECK(std::abs(pr.probs.sum() - 1.0) < 1e-9);
    CHECK(pr.probs.minCoeff() > 0.0);
    CHECK(pr.aleatoric_variance >= 0.0);
  }

  // Fixed seed, fixed answer.
  const BayesHeadParams p = make_head(3, rng, 0.5);
  RngStream s1(77), s2(77);
  CHECK(predict(x, p, 40, s1).probs == predict(x, p, 40, s2).probs);

  // 1e5 vs 1e6 draws agree within 3 combined standard errors.
  const BayesHeadParams h = fixed_head(0.2, -0.6, 1.3);
  RngStream r5(10), r6(11);
  const McEstimate m5 = mc_loss(h, 0, 100000, r5), m6 = mc_loss(h, 0, 1000000, r6);
  CHECK(std::abs(m5.loss - m6.loss) < 3.0 * std::hypot(m5.standard_error, m6.standard_error));
}

TEST_CASE("head gradient with frozen noise matches finite differences") {
  RngStream rng(12);
  const std::size_t d = 4, B = 3, T = 8;
  for (std::size_t noise_dims : {1, 2}) {
    BayesHeadParams p = make_head(d, rng, 0.3, noise_dims);
    p.log_variance.weights = test::random_tensor({noise_dims, d}, rng, 0.5);
    Tensor features = test::random_tensor({d, B}, rng);
    const std::vector<int> labels{0, 1, 1};
    const Tensor noise = sample_standard_normal(rng, {B, T, 2});
    const std::vector<double> cw{0.7, 1.9};
    for (bool weighted : {false, true}) {
      std::span<const double> cws = weighted ? std::span<const double>(cw) : std::span<const double>();
      auto f = [&] { return head_loss_and_gradient(features, labels, p, noise, {0.2, 1.0}, cws).loss; };
      const HeadBatchResult r = head_loss_and_gradient(features, labels, p, noise, {0.2, 1.0}, cws);
      CHECK(test::max_rel_err(r.grad.log_variance.weights, test::numeric_gradient(f, p.log_variance.weights)) < 1e-6);
      CHECK(test::max_rel_err(r.grad.log_variance.bias, test::numeric_gradient(f, p.log_variance.bias)) < 1e-6);
      CHECK(test::max_rel_err(r.grad.logits.weights, test::numeric_gradient(f, p.logits.weights)) < 1e-6);
      CHECK(test::max_rel_err(r.grad.logits.bias, test::numeric_gradient(f, p.logits.bias)) < 1e-6);
      CHECK(test::max_rel_err(r.grad_features, test::numeric_gradient(f, features)) < 1e-6);
    }
  }
}

TEST_CASE("benchmark weights leave the sigma branch untouched") {
  RngStream rng(13);
  const BayesHeadParams p = make_head(4, rng);
  const Tensor features = test::random_tensor({4, 2}, rng);
  const std::vector<int> labels{1, 0};
  const HeadBatchResult r = head_loss_and_gradient(features, labels, p, Tensor(), {0.0, 1.0});
  CHECK(r.grad.log_variance.weights.flat().isZero(0.0));
  CHECK(r.grad.log_variance.bias.flat().isZero(0.0));
  const double expected =
      0.5 * (cross_entropy(head_logits(Vector(features.matrix().col(0)), p), 1) +
             cross_entropy(head_logits(Vector(features.matrix().col(1)), p), 0));
  CHECK(std::abs(r.loss - expected) < 1e-12);
}
