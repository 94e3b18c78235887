#include "aleatoric/bayes_head.hpp"

#include <cmath>
#include <string>

namespace aleatoric {

namespace {

void check_label(std::size_t label, std::size_t classes) {
  if (label >= classes) {
    throw DomainError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
  }
}

void check_features(const Vector& x, const BayesHeadParams& params) {
  if (static_cast<std::size_t>(x.size()) != params.feature_dim()) {
    throw DimensionError("bayes head: feature length " + std::to_string(x.size()) + " != " +
                         std::to_string(params.feature_dim()));
  }
  if (!x.allFinite()) throw NumericError("bayes head: non-finite features");
}

// Noise dimension that drives class c.
std::size_t noise_index(std::size_t c, std::size_t noise_dims) { return noise_dims == 1 ? 0 : c; }

}  // namespace

void validate(const BayesHeadParams& params) {
  const auto& w = params.logits.weights;
  const auto& v = params.log_variance.weights;
  if (w.rank() != 2 || v.rank() != 2) throw DimensionError("bayes head: weights must be rank 2");
  if (w.extent(0) < 2) throw DomainError("bayes head: need at least two classes");
  if (v.extent(1) != w.extent(1)) throw DimensionError("bayes head: logit and variance maps disagree on d");
  if (v.extent(0) != 1 && v.extent(0) != w.extent(0)) {
    throw DimensionError("bayes head: variance map must have 1 or C outputs");
  }
  if (params.logits.bias.size() != w.extent(0) || params.log_variance.bias.size() != v.extent(0)) {
    throw DimensionError("bayes head: bias length mismatch");
  }
}

Vector head_logits(const Vector& x, const BayesHeadParams& params) {
  check_features(x, params);
  return params.logits.weights.matrix() * x + params.logits.bias.flat();
}

Vector sigmas_of(const Vector& x, const BayesHeadParams& params) {
  check_features(x, params);
  const Vector s = params.log_variance.weights.matrix() * x + params.log_variance.bias.flat();
  Vector sigma = (0.5 * s.array()).exp().matrix();
  if (!sigma.allFinite()) throw NumericError("sigma_of: log variance overflows");
  return sigma;
}

double sigma_of(const Vector& x, const BayesHeadParams& params) {
  if (params.noise_dims() != 1) throw DimensionError("sigma_of: head is per-class; use sigmas_of");
  return sigmas_of(x, params)[0];
}

Matrix corrupt_logits(const Vector& logits, const Vector& sigmas, const Matrix& eps) {
  const auto classes = logits.size();
  if (eps.cols() != classes) throw DimensionError("corrupt_logits: eps must be [T, C]");
  Matrix out(eps.rows(), classes);
  for (Eigen::Index c = 0; c < classes; ++c) {
    const double s = sigmas[static_cast<Eigen::Index>(noise_index(static_cast<std::size_t>(c), sigmas.size()))];
    out.col(c) = (s * eps.col(c)).array() + logits[c];
  }
  if (!out.allFinite()) throw NumericError("corrupt_logits: non-finite result");
  return out;
}

Matrix mc_corrupt_logits(const Vector& x, const BayesHeadParams& params, std::size_t samples, RngStream& rng) {
  if (samples == 0) throw DomainError("mc_corrupt_logits: T must be >= 1");
  const Vector z = head_logits(x, params);
  const Vector sigma = sigmas_of(x, params);
  const Tensor eps = sample_standard_normal(rng, {samples, params.classes()});
  return corrupt_logits(z, sigma, eps.matrix());
}

double bayes_ce_loss(const Matrix& corrupted, std::size_t label) {
  check_label(label, static_cast<std::size_t>(corrupted.cols()));
  const auto samples = corrupted.rows();
  if (samples == 0) throw DomainError("bayes_ce_loss: no MC samples");
  Vector log_true(samples);
  for (Eigen::Index t = 0; t < samples; ++t) {
    log_true[t] = corrupted(t, static_cast<Eigen::Index>(label)) - log_sum_exp(corrupted.row(t));
  }
  return std::log(static_cast<double>(samples)) - log_sum_exp(log_true);
}

double cross_entropy(const Vector& logits, std::size_t label) {
  check_label(label, static_cast<std::size_t>(logits.size()));
  return log_sum_exp(logits) - logits[static_cast<Eigen::Index>(label)];
}

double combined_loss(const Vector& x, std::size_t label, const BayesHeadParams& params, std::size_t samples,
                     RngStream& rng, LossWeights weights) {
  if (weights.bayes < 0.0 || weights.ce < 0.0) throw DomainError("combined_loss: weights must be >= 0");
  const Vector z = head_logits(x, params);
  const Matrix corrupted = mc_corrupt_logits(x, params, samples, rng);
  return weights.bayes * bayes_ce_loss(corrupted, label) + weights.ce * cross_entropy(z, label);
}

Prediction predict(const Vector& x, const BayesHeadParams& params, std::size_t samples, RngStream& rng) {
  const Matrix corrupted = mc_corrupt_logits(x, params, samples, rng);
  Prediction p;
  p.probs = Vector::Zero(corrupted.cols());
  for (Eigen::Index t = 0; t < corrupted.rows(); ++t) p.probs += softmax(corrupted.row(t).transpose());
  p.probs /= static_cast<double>(samples);
  p.aleatoric_variance = sigmas_of(x, params).array().square().mean();
  p.mc_samples = samples;
  return p;
}

HeadBatchResult head_loss_and_gradient(const Tensor& features, std::span<const int> labels,
                                       const BayesHeadParams& params, const Tensor& noise, LossWeights weights,
                                       std::span<const double> class_weights) {
  validate(params);
  if (features.rank() != 2 || features.extent(0) != params.feature_dim()) {
    throw DimensionError("head_loss_and_gradient: features must be [d, B]");
  }
  const std::size_t batch = features.extent(1);
  const std::size_t classes = params.classes();
  const std::size_t noise_dims = params.noise_dims();
  if (labels.size() != batch) throw DimensionError("head_loss_and_gradient: label count != batch");
  if (batch == 0) throw DomainError("head_loss_and_gradient: empty batch");
  if (!class_weights.empty() && class_weights.size() != classes) {
    throw DimensionError("head_loss_and_gradient: one class weight per class");
  }
  const bool bayes = weights.bayes > 0.0;
  std::size_t samples = 0;
  if (bayes) {
    if (noise.rank() != 3 || noise.extent(0) != batch || noise.extent(2) != classes || noise.extent(1) == 0) {
      throw DimensionError("head_loss_and_gradient: noise must be [B, T, C], got " + shape_string(noise.shape()));
    }
    samples = noise.extent(1);
  }

  const auto x = features.matrix();
  const Matrix z = (params.logits.weights.matrix() * x).colwise() + params.logits.bias.flat();
  const Matrix s = (params.log_variance.weights.matrix() * x).colwise() + params.log_variance.bias.flat();

  Matrix dz = Matrix::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(batch));
  Matrix ds = Matrix::Zero(static_cast<Eigen::Index>(noise_dims), static_cast<Eigen::Index>(batch));
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  for (std::size_t i = 0; i < batch; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto y = static_cast<std::size_t>(labels[i]);
    check_label(y, classes);
    const double cw = class_weights.empty() ? 1.0 : class_weights[y];
    const double scale = cw * inv_batch;
    const Vector zi = z.col(col);

    // Standard cross-entropy on the uncorrupted logits.
    const Vector p = softmax(zi);
    total += scale * weights.ce * (log_sum_exp(zi) - zi[static_cast<Eigen::Index>(y)]);
    Vector dzi = weights.ce * p;
    dzi[static_cast<Eigen::Index>(y)] -= weights.ce;

    if (bayes) {
      const Vector sigma = (0.5 * s.col(col).array()).exp().matrix();
      if (!sigma.allFinite()) throw NumericError("head_loss_and_gradient: sigma overflows");
      const Eigen::Map<const Matrix> eps(noise.data() + i * samples * classes, static_cast<Eigen::Index>(samples),
                                         static_cast<Eigen::Index>(classes));
      const Matrix xhat = corrupt_logits(zi, sigma, eps);

      // a_t = log softmax(xhat_t)[y]; loss = log T - lse_t(a_t); weight_t = softmax_t(a_t).
      Matrix probs(xhat.rows(), xhat.cols());
      Vector a(xhat.rows());
      for (Eigen::Index t = 0; t < xhat.rows(); ++t) {
        const double lse = log_sum_exp(xhat.row(t));
        a[t] = xhat(t, static_cast<Eigen::Index>(y)) - lse;
        probs.row(t) = (xhat.row(t).array() - lse).exp();
      }
      const double lse_a = log_sum_exp(a);
      total += scale * weights.bayes * (std::log(static_cast<double>(samples)) - lse_a);
      const Vector w = (a.array() - lse_a).exp().matrix();

      // dL/dxhat_{t,c} = -w_t (1[c == y] - p_{t,c})
      Matrix dxhat = probs.array().colwise() * w.array();
      dxhat.col(static_cast<Eigen::Index>(y)) -= w;
      dxhat *= weights.bayes;
      dzi += dxhat.colwise().sum().transpose();

      Vector dsigma = Vector::Zero(static_cast<Eigen::Index>(noise_dims));
      for (std::size_t c = 0; c < classes; ++c) {
        dsigma[static_cast<Eigen::Index>(noise_index(c, noise_dims))] +=
            dxhat.col(static_cast<Eigen::Index>(c)).dot(eps.col(static_cast<Eigen::Index>(c)));
      }
      ds.col(col) = scale * (dsigma.array() * sigma.array() * 0.5).matrix();
    }
    dz.col(col) = scale * dzi;
  }

  if (!std::isfinite(total)) throw NumericError("head_loss_and_gradient: non-finite loss");

  HeadBatchResult r;
  r.loss = total;
  r.grad.logits.weights = Tensor::from_matrix(dz * x.transpose());
  r.grad.logits.bias = Tensor({classes});
  r.grad.logits.bias.flat() = dz.rowwise().sum();
  r.grad.log_variance.weights = Tensor::from_matrix(ds * x.transpose());
  r.grad.log_variance.bias = Tensor({noise_dims});
  r.grad.log_variance.bias.flat() = ds.rowwise().sum();
  r.grad_features = Tensor::from_matrix(params.logits.weights.matrix().transpose() * dz +
                                        params.log_variance.weights.matrix().transpose() * ds);
  return r;
}

}  // namespace aleatoric
