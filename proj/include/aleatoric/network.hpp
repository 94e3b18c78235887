#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "aleatoric/bayes_head.hpp"
#include "aleatoric/layers.hpp"

namespace aleatoric {

/// Benchmark architecture: input -> conv(3) + relu -> conv(3) + relu ->
/// dropout -> max pool -> batch norm -> dense head.
struct NetworkConfig {
  std::size_t in_channels = 76;
  std::size_t time_steps = 48;
  std::size_t filters = 50;
  std::size_t kernel_width = 3;
  double keep_prob = 0.5;
  /// 0 pools over the whole time axis.
  std::size_t pool_window = 0;
  bool batch_norm = true;
  std::size_t classes = 2;
  bool per_class_sigma = false;

  std::size_t effective_pool_window() const { return pool_window == 0 ? time_steps : pool_window; }
  std::size_t feature_dim() const { return filters * (time_steps / effective_pool_window()); }
};

void validate(const NetworkConfig& config);

struct ModelParams {
  Conv1dParams conv1;
  Conv1dParams conv2;
  BatchNormParams norm;
  BatchNormState norm_state;
  BayesHeadParams head;

  /// Every tensor by stable name, trainable ones first. Running statistics are
  /// included but not trainable.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor*>> trainable();

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Same-shaped zero parameters, used as a gradient accumulator.
ModelParams zeros_like(const ModelParams& params);

/// Fan-in scaled uniform init: conv and dense weights U(-b, b) with
/// b = sqrt(6 / fan_in) (ReLU gain) for the convolutions and sqrt(3 / fan_in)
/// for the head; zero biases, unit gamma, zero beta.
ModelParams init_params(const NetworkConfig& config, RngStream& rng);

struct ForwardCache {
  Conv1dCache conv1;
  ReluCache relu1;
  Conv1dCache conv2;
  ReluCache relu2;
  DropoutCache dropout;
  MaxPoolCache pool;
  Shape pooled_shape;
  BatchNormCache norm;
};

/// Penultimate features [d, B] for an input [in_channels, B, time].
/// Training mode updates the batch-norm running statistics in `params`.
Tensor network_forward(const NetworkConfig& config, ModelParams& params, const Tensor& input, Mode mode,
                       RngStream* dropout_rng, ForwardCache& cache);

/// Inference-only forward that leaves `params` untouched.
Tensor network_features(const NetworkConfig& config, const ModelParams& params, const Tensor& input);

/// Accumulates gradients of the trunk (conv, norm) into `grads` given dL/dfeatures.
void network_backward(const NetworkConfig& config, const ModelParams& params, const Tensor& grad_features,
                      const ForwardCache& cache, ModelParams& grads);

}  // namespace aleatoric
