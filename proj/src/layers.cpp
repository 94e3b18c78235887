#include "aleatoric/layers.hpp"

#include <string>

namespace aleatoric {

namespace {

struct SequenceDims {
  std::size_t channels;
  std::size_t batch;
  std::size_t time;
};

SequenceDims sequence_dims(const Shape& s, const char* where) {
  if (s.size() == 2) return {s[0], 1, s[1]};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw DimensionError(std::string(where) + ": expected [C, T] or [C, B, T], got " + shape_string(s));
}

Shape sequence_shape(const Shape& like, std::size_t channels, std::size_t time) {
  if (like.size() == 2) return {channels, time};
  return {channels, like[1], time};
}

void require_filled(bool filled, const char* where) {
  if (!filled) throw StateError(std::string(where) + ": backward called without a matching forward cache");
}

void require_flat(const Tensor& x, const char* where) {
  if (x.rank() != 2) throw DimensionError(std::string(where) + ": expected [features, batch], got " + shape_string(x.shape()));
}

}  // namespace

void validate(const Conv1dParams& params) {
  if (params.kernels.rank() != 3) throw DimensionError("conv1d: kernels must be [out, in, width]");
  if (params.out_channels() < 1) throw DomainError("conv1d: out_ch must be >= 1");
  if (params.width() % 2 == 0) throw DomainError("conv1d: kernel width must be odd");
  if (params.bias.size() != params.out_channels()) throw DimensionError("conv1d: bias length != out_ch");
}

Tensor conv1d_forward(const Tensor& input, const Conv1dParams& params, Conv1dCache& cache) {
  validate(params);
  const auto [in_ch, batch, time] = sequence_dims(input.shape(), "conv1d");
  if (in_ch != params.in_channels()) {
    throw DimensionError("conv1d: input has " + std::to_string(in_ch) + " channels, kernel expects " +
                         std::to_string(params.in_channels()));
  }
  const std::size_t width = params.width();
  if (time < width) throw DimensionError("conv1d: time length shorter than kernel width");
  const auto pad = static_cast<std::ptrdiff_t>(width / 2);
  const auto cols = static_cast<Eigen::Index>(batch * time);

  Matrix& columns = cache.columns;
  columns.setZero(static_cast<Eigen::Index>(in_ch * width), cols);
  const double* src = input.data();
  for (std::size_t i = 0; i < in_ch; ++i) {
    for (std::size_t w = 0; w < width; ++w) {
      double* row = columns.row(static_cast<Eigen::Index>(i * width + w)).data();
      const auto shift = static_cast<std::ptrdiff_t>(w) - pad;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* in_row = src + (i * batch + b) * time;
        double* out_row = row + b * time;
        for (std::size_t t = 0; t < time; ++t) {
          const auto s = static_cast<std::ptrdiff_t>(t) + shift;
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(time)) out_row[t] = in_row[s];
        }
      }
    }
  }
  cache.input_shape = input.shape();
  cache.filled = true;

  Tensor out(sequence_shape(input.shape(), params.out_channels(), time));
  auto y = out.matrix();
  y.noalias() = params.kernels.matrix() * columns;
  y.colwise() += params.bias.flat();
  out.check_finite("conv1d_forward");
  return out;
}

Conv1dGradient conv1d_backward(const Tensor& grad_out, const Conv1dParams& params, const Conv1dCache& cache) {
  require_filled(cache.filled, "conv1d_backward");
  const auto [in_ch, batch, time] = sequence_dims(cache.input_shape, "conv1d_backward");
  const std::size_t width = params.width();
  const auto pad = static_cast<std::ptrdiff_t>(width / 2);
  if (grad_out.shape() != sequence_shape(cache.input_shape, params.out_channels(), time)) {
    throw DimensionError("conv1d_backward: grad_out shape " + shape_string(grad_out.shape()));
  }

  const auto dy = grad_out.matrix();
  Conv1dGradient g;
  g.params.kernels = Tensor(params.kernels.shape());
  g.params.kernels.matrix().noalias() = dy * cache.columns.transpose();
  g.params.bias = Tensor({params.out_channels()});
  g.params.bias.flat() = dy.rowwise().sum();

  const Matrix dcols = params.kernels.matrix().transpose() * dy;
  g.input = Tensor(cache.input_shape);
  double* dst = g.input.data();
  for (std::size_t i = 0; i < in_ch; ++i) {
    for (std::size_t w = 0; w < width; ++w) {
      const double* row = dcols.row(static_cast<Eigen::Index>(i * width + w)).data();
      const auto shift = static_cast<std::ptrdiff_t>(w) - pad;
      for (std::size_t b = 0; b < batch; ++b) {
        double* in_row = dst + (i * batch + b) * time;
        const double* g_row = row + b * time;
        for (std::size_t t = 0; t < time; ++t) {
          const auto s = static_cast<std::ptrdiff_t>(t) + shift;
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(time)) in_row[s] += g_row[t];
        }
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x, ReluCache& cache) {
  Tensor y = x;
  y.flat() = x.flat().cwiseMax(0.0);
  cache.output = y;
  cache.filled = true;
  return y;
}

Tensor relu_backward(const Tensor& grad_out, const ReluCache& cache) {
  require_filled(cache.filled, "relu_backward");
  if (grad_out.shape() != cache.output.shape()) throw DimensionError("relu_backward: shape mismatch");
  Tensor g = grad_out;
  g.flat() = (cache.output.flat().array() > 0.0).select(grad_out.flat(), 0.0);
  return g;
}

Tensor dropout_forward(const Tensor& x, double keep_prob, Mode mode, RngStream* rng, DropoutCache& cache) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw DomainError("dropout: keep_prob must be in (0, 1]");
  if (mode == Mode::Inference) {
    if (rng != nullptr) throw ContractError("dropout: inference mode must not be given an rng");
    cache.scale = Tensor();
    cache.frozen = false;
    return x;
  }
  if (cache.frozen) {
    if (cache.scale.empty() && keep_prob == 1.0) return x;
    if (cache.scale.shape() != x.shape()) throw DimensionError("dropout: frozen mask shape mismatch");
  } else if (keep_prob == 1.0) {
    cache.scale = Tensor();
    return x;
  } else {
    if (rng == nullptr) throw ContractError("dropout: training mode needs an rng");
    cache.scale = Tensor(x.shape());
    const double kept = 1.0 / keep_prob;
    for (auto& s : cache.scale.values()) s = rng->uniform() < keep_prob ? kept : 0.0;
  }
  Tensor y = x;
  y.flat().array() *= cache.scale.flat().array();
  return y;
}

Tensor dropout_backward(const Tensor& grad_out, const DropoutCache& cache) {
  if (cache.scale.empty()) return grad_out;
  if (grad_out.shape() != cache.scale.shape()) throw DimensionError("dropout_backward: shape mismatch");
  Tensor g = grad_out;
  g.flat().array() *= cache.scale.flat().array();
  return g;
}

Tensor max_pool1d_forward(const Tensor& x, std::size_t window, MaxPoolCache& cache) {
  const auto [channels, batch, time] = sequence_dims(x.shape(), "max_pool1d");
  if (window == 0 || window > time) throw DomainError("max_pool1d: window must be in [1, time]");
  const std::size_t out_time = time / window;
  Tensor y(sequence_shape(x.shape(), channels, out_time));
  cache.argmax.assign(y.size(), 0);
  const double* src = x.data();
  std::size_t o = 0;
  for (std::size_t row = 0; row < channels * batch; ++row) {
    const std::size_t base = row * time;
    for (std::size_t p = 0; p < out_time; ++p, ++o) {
      std::size_t best = base + p * window;
      for (std::size_t k = 1; k < window; ++k) {
        const std::size_t idx = base + p * window + k;
        if (src[idx] > src[best]) best = idx;
      }
      cache.argmax[o] = best;
      y[o] = src[best];
    }
  }
  cache.input_shape = x.shape();
  cache.filled = true;
  return y;
}

Tensor max_pool1d_backward(const Tensor& grad_out, const MaxPoolCache& cache) {
  require_filled(cache.filled, "max_pool1d_backward");
  if (grad_out.size() != cache.argmax.size()) throw DimensionError("max_pool1d_backward: shape mismatch");
  Tensor g(cache.input_shape);
  for (std::size_t o = 0; o < cache.argmax.size(); ++o) g[cache.argmax[o]] += grad_out[o];
  return g;
}

Tensor batch_norm1d_forward(const Tensor& x, const BatchNormParams& params, BatchNormState& state, Mode mode,
                            BatchNormCache& cache, double epsilon, double momentum) {
  require_flat(x, "batch_norm1d");
  const auto features = static_cast<Eigen::Index>(x.extent(0));
  const auto batch = static_cast<Eigen::Index>(x.extent(1));
  if (params.gamma.size() != x.extent(0) || params.beta.size() != x.extent(0)) {
    throw DimensionError("batch_norm1d: parameter length != feature count");
  }
  if (batch == 0) throw DomainError("batch_norm1d: empty batch");
  const auto in = x.matrix();

  Vector mean, var;
  if (mode == Mode::Training) {
    mean = in.rowwise().mean();
    var = (in.colwise() - mean).array().square().rowwise().mean().matrix();
    state.running_mean.flat() = (1.0 - momentum) * state.running_mean.flat() + momentum * mean;
    state.running_var.flat() = (1.0 - momentum) * state.running_var.flat() + momentum * var;
  } else {
    mean = state.running_mean.flat();
    var = state.running_var.flat();
  }
  cache.inv_std = (var.array() + epsilon).rsqrt().matrix();
  cache.normalized = (in.colwise() - mean).array().colwise() * cache.inv_std.array();
  cache.filled = true;

  Tensor y({static_cast<std::size_t>(features), static_cast<std::size_t>(batch)});
  y.matrix() = (cache.normalized.array().colwise() * params.gamma.flat().array()).colwise() +
               params.beta.flat().array();
  y.check_finite("batch_norm1d_forward");
  return y;
}

BatchNormGradient batch_norm1d_backward(const Tensor& grad_out, const BatchNormParams& params,
                                        const BatchNormCache& cache) {
  require_filled(cache.filled, "batch_norm1d_backward");
  const auto dy = grad_out.matrix();
  if (dy.rows() != cache.normalized.rows() || dy.cols() != cache.normalized.cols()) {
    throw DimensionError("batch_norm1d_backward: shape mismatch");
  }
  const double n = static_cast<double>(dy.cols());
  BatchNormGradient g;
  g.params.gamma = Tensor(params.gamma.shape());
  g.params.beta = Tensor(params.beta.shape());
  g.params.gamma.flat() = dy.cwiseProduct(cache.normalized).rowwise().sum();
  g.params.beta.flat() = dy.rowwise().sum();

  // dx = gamma * inv_std / n * (n * dy - sum(dy) - x_hat * sum(dy * x_hat))
  const Eigen::ArrayXd scale = params.gamma.flat().array() * cache.inv_std.array() / n;
  Eigen::ArrayXXd dx = (n * dy.array()).colwise() - g.params.beta.flat().array();
  dx -= cache.normalized.array().colwise() * g.params.gamma.flat().array();
  dx.colwise() *= scale;
  g.input = Tensor(grad_out.shape());
  g.input.matrix() = dx.matrix();
  return g;
}

Tensor dense_forward(const Tensor& x, const DenseParams& params, DenseCache& cache) {
  require_flat(x, "dense");
  if (params.weights.rank() != 2 || params.weights.extent(1) != x.extent(0) ||
      params.bias.size() != params.weights.extent(0)) {
    throw DimensionError("dense: weights " + shape_string(params.weights.shape()) + " vs input " +
                         shape_string(x.shape()));
  }
  Tensor y({params.weights.extent(0), x.extent(1)});
  y.matrix().noalias() = params.weights.matrix() * x.matrix();
  y.matrix().colwise() += params.bias.flat();
  y.check_finite("dense_forward");
  cache.input = x;
  cache.filled = true;
  return y;
}

DenseGradient dense_backward(const Tensor& grad_out, const DenseParams& params, const DenseCache& cache) {
  require_filled(cache.filled, "dense_backward");
  if (grad_out.rank() != 2 || grad_out.extent(0) != params.weights.extent(0) ||
      grad_out.extent(1) != cache.input.extent(1)) {
    throw DimensionError("dense_backward: grad_out shape " + shape_string(grad_out.shape()));
  }
  DenseGradient g;
  g.params.weights = Tensor(params.weights.shape());
  g.params.weights.matrix().noalias() = grad_out.matrix() * cache.input.matrix().transpose();
  g.params.bias = Tensor(params.bias.shape());
  g.params.bias.flat() = grad_out.matrix().rowwise().sum();
  g.input = Tensor(cache.input.shape());
  g.input.matrix().noalias() = params.weights.matrix().transpose() * grad_out.matrix();
  return g;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw DimensionError("softmax: expected a vector");
  if (logits.size() < 2) throw DomainError("softmax: need at least two logits");
  logits.check_finite("softmax");
  Tensor p(logits.shape());
  p.flat() = softmax(logits.flat());
  return p;
}

}  // namespace aleatoric
