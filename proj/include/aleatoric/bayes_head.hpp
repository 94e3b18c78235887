#pragma once

#include <cstddef>
#include <span>

#include "aleatoric/layers.hpp"

namespace aleatoric {

/// Two dense maps from the penultimate feature vector x: the class logits Wx + b
/// and the log variance s = v.x + c of the Gaussian logit corruption. `log_variance`
/// has one output row (isotropic noise) or one per class.
struct BayesHeadParams {
  DenseParams logits;        // [C, d], [C]
  DenseParams log_variance;  // [K, d], [K] with K in {1, C}

  std::size_t classes() const { return logits.weights.extent(0); }
  std::size_t feature_dim() const { return logits.weights.extent(1); }
  std::size_t noise_dims() const { return log_variance.weights.extent(0); }
};

void validate(const BayesHeadParams& params);

struct Prediction {
  Vector probs;
  /// sigma_x^2; the mean over classes when the head is per-class.
  double aleatoric_variance = 0.0;
  std::size_t mc_samples = 0;
};

struct LossWeights {
  double bayes = 0.2;
  double ce = 1.0;
};

/// W x + b.
Vector head_logits(const Vector& x, const BayesHeadParams& params);

/// Per-noise-dimension sigma = exp(s / 2).
Vector sigmas_of(const Vector& x, const BayesHeadParams& params);

/// Isotropic sigma_x. Throws DimensionError for a per-class head.
double sigma_of(const Vector& x, const BayesHeadParams& params);

/// Row t is Wx + sigma * eps_t for the given [T, C] standard-normal draws.
Matrix corrupt_logits(const Vector& logits, const Vector& sigmas, const Matrix& eps);

/// Draws eps from `rng` and returns the [T, C] corrupted logits.
Matrix mc_corrupt_logits(const Vector& x, const BayesHeadParams& params, std::size_t samples, RngStream& rng);

/// -log((1/T) sum_t softmax(xhat_t)[label]), evaluated in log space.
double bayes_ce_loss(const Matrix& corrupted, std::size_t label);

/// -log softmax(logits)[label].
double cross_entropy(const Vector& logits, std::size_t label);

double combined_loss(const Vector& x, std::size_t label, const BayesHeadParams& params, std::size_t samples,
                     RngStream& rng, LossWeights weights = {});

/// probs = (1/T) sum_t softmax(xhat_t).
Prediction predict(const Vector& x, const BayesHeadParams& params, std::size_t samples, RngStream& rng);

/// Loss and gradients of the weighted loss for a batch of feature columns.
struct HeadBatchResult {
  double loss = 0.0;
  BayesHeadParams grad;
  Tensor grad_features;  // [d, B]
};

/// Batch objective: mean_i class_weight[y_i] * (w_bayes * bayes_ce_i + w_ce * ce_i).
///
/// `noise` holds the frozen draws as [B, T, C]. With `weights.bayes == 0` the
/// sigma branch receives a zero gradient and `noise` may be empty.
HeadBatchResult head_loss_and_gradient(const Tensor& features, std::span<const int> labels,
                                       const BayesHeadParams& params, const Tensor& noise, LossWeights weights,
                                       std::span<const double> class_weights = {});

}  // namespace aleatoric
