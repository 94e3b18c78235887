#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "aleatoric/random.hpp"
#include "aleatoric/tensor.hpp"

namespace aleatoric {

enum class Mode { Training, Inference };

// Activation layout
// -----------------
// Sequence activations are channel-major: [channels, batch, time], or
// [channels, time] for a single instance. Both view as a
// channels x (batch * time) matrix, which is what the convolution GEMM wants.
// Flat activations are [features, batch], one column per instance.

struct Conv1dParams {
  Tensor kernels;  // [out_ch, in_ch, width]
  Tensor bias;     // [out_ch]

  std::size_t out_channels() const { return kernels.extent(0); }
  std::size_t in_channels() const { return kernels.extent(1); }
  std::size_t width() const { return kernels.extent(2); }
};

/// Throws DomainError unless width is odd and out_ch >= 1.
void validate(const Conv1dParams& params);

struct Conv1dCache {
  bool filled = false;
  Shape input_shape;
  Matrix columns;  // [in_ch * width, batch * time] im2col of the zero-padded input
};

struct Conv1dGradient {
  Tensor input;
  Conv1dParams params;
};

/// "Same" convolution along time: out[o][t] = bias[o] + sum_{i,w} k[o][i][w] * in_pad[i][t + w].
Tensor conv1d_forward(const Tensor& input, const Conv1dParams& params, Conv1dCache& cache);
Conv1dGradient conv1d_backward(const Tensor& grad_out, const Conv1dParams& params, const Conv1dCache& cache);

struct ReluCache {
  bool filled = false;
  Tensor output;
};

Tensor relu_forward(const Tensor& x, ReluCache& cache);
Tensor relu_backward(const Tensor& grad_out, const ReluCache& cache);

struct DropoutCache {
  Tensor scale;  // 0 or 1/keep_prob per element; empty when the layer was an identity
  /// When set, forward reuses `scale` instead of drawing a fresh mask.
  bool frozen = false;
};

/// Inverted dropout. Training mode needs an rng unless keep_prob == 1 or the
/// mask is frozen; inference mode is the identity and rejects an rng.
Tensor dropout_forward(const Tensor& x, double keep_prob, Mode mode, RngStream* rng, DropoutCache& cache);
Tensor dropout_backward(const Tensor& grad_out, const DropoutCache& cache);

struct MaxPoolCache {
  bool filled = false;
  Shape input_shape;
  std::vector<std::size_t> argmax;  // flat input offset feeding each output element
};

/// Non-overlapping max pooling along time with the given window (stride ==
/// window). Input [C, B, L] -> [C, B, L / window]. Ties go to the lowest index.
Tensor max_pool1d_forward(const Tensor& x, std::size_t window, MaxPoolCache& cache);
Tensor max_pool1d_backward(const Tensor& grad_out, const MaxPoolCache& cache);

struct BatchNormParams {
  Tensor gamma;  // [features]
  Tensor beta;   // [features]
};

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

struct BatchNormCache {
  bool filled = false;
  Matrix normalized;  // x_hat [features, batch]
  Vector inv_std;
};

struct BatchNormGradient {
  Tensor input;
  BatchNormParams params;
};

/// Normalizes each feature row of x [features, batch]. Training uses the batch
/// mean and biased variance and updates `state` with an exponential moving
/// average; inference uses `state`.
Tensor batch_norm1d_forward(const Tensor& x, const BatchNormParams& params, BatchNormState& state, Mode mode,
                            BatchNormCache& cache, double epsilon = kBatchNormEpsilon,
                            double momentum = kBatchNormMomentum);
BatchNormGradient batch_norm1d_backward(const Tensor& grad_out, const BatchNormParams& params,
                                        const BatchNormCache& cache);

struct DenseParams {
  Tensor weights;  // [out, in]
  Tensor bias;     // [out]
};

struct DenseCache {
  bool filled = false;
  Tensor input;
};

struct DenseGradient {
  Tensor input;
  DenseParams params;
};

/// y = W x + b for x [in, batch].
Tensor dense_forward(const Tensor& x, const DenseParams& params, DenseCache& cache);
DenseGradient dense_backward(const Tensor& grad_out, const DenseParams& params, const DenseCache& cache);

/// Max-shifted softmax of a logit vector.
template <typename Derived>
Vector softmax(const Eigen::MatrixBase<Derived>& logits) {
  Vector shifted = logits - Vector::Constant(logits.size(), logits.maxCoeff());
  Vector e = shifted.array().exp().matrix();
  return e / e.sum();
}

Tensor softmax(const Tensor& logits);

}  // namespace aleatoric
