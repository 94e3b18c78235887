#include "aleatoric/network.hpp"

#include <cmath>

namespace aleatoric {

namespace {

Tensor uniform_tensor(Shape shape, double bound, RngStream& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = bound * (2.0 * rng.uniform() - 1.0);
  return t;
}

// [C, B, L'] -> [C * L', B]
Tensor flatten_pooled(const Tensor& pooled) {
  const std::size_t c = pooled.extent(0), b = pooled.extent(1), l = pooled.extent(2);
  if (l == 1) return pooled.reshaped({c, b});
  Tensor out({c * l, b});
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t li = 0; li < l; ++li) out(ci * l + li, bi) = pooled(ci, bi, li);
  return out;
}

Tensor unflatten_pooled(const Tensor& flat, const Shape& pooled_shape) {
  const std::size_t c = pooled_shape[0], b = pooled_shape[1], l = pooled_shape[2];
  if (l == 1) return flat.reshaped(pooled_shape);
  Tensor out(pooled_shape);
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t li = 0; li < l; ++li) out(ci, bi, li) = flat(ci * l + li, bi);
  return out;
}

void add_into(Tensor& acc, const Tensor& g) { acc.flat() += g.flat(); }

}  // namespace

void validate(const NetworkConfig& config) {
  if (config.in_channels == 0 || config.filters == 0) throw DomainError("network: channel counts must be >= 1");
  if (config.kernel_width % 2 == 0) throw DomainError("network: kernel width must be odd");
  if (config.time_steps < config.kernel_width) throw DomainError("network: time_steps < kernel width");
  if (config.effective_pool_window() > config.time_steps) throw DomainError("network: pool window > time_steps");
  if (!(config.keep_prob > 0.0 && config.keep_prob <= 1.0)) throw DomainError("network: keep_prob must be in (0, 1]");
  if (config.classes < 2) throw DomainError("network: need at least two classes");
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_tensors() {
  return {{"conv1.kernels", &conv1.kernels},
          {"conv1.bias", &conv1.bias},
          {"conv2.kernels", &conv2.kernels},
          {"conv2.bias", &conv2.bias},
          {"norm.gamma", &norm.gamma},
          {"norm.beta", &norm.beta},
          {"head.logits.weights", &head.logits.weights},
          {"head.logits.bias", &head.logits.bias},
          {"head.log_variance.weights", &head.log_variance.weights},
          {"head.log_variance.bias", &head.log_variance.bias},
          {"norm.running_mean", &norm_state.running_mean},
          {"norm.running_var", &norm_state.running_var}};
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::trainable() {
  auto all = named_tensors();
  all.resize(all.size() - 2);
  return all;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  const auto ta = a.named_tensors();
  const auto tb = b.named_tensors();
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i].second == *tb[i].second)) return false;
  }
  return true;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (auto& [name, t] : z.named_tensors()) t->flat().setZero();
  return z;
}

ModelParams init_params(const NetworkConfig& config, RngStream& rng) {
  validate(config);
  const std::size_t w = config.kernel_width;
  const std::size_t d = config.feature_dim();
  const std::size_t k = config.per_class_sigma ? config.classes : 1;
  ModelParams p;
  p.conv1.kernels = uniform_tensor({config.filters, config.in_channels, w},
                                   std::sqrt(6.0 / static_cast<double>(config.in_channels * w)), rng);
  p.conv1.bias = Tensor({config.filters});
  p.conv2.kernels = uniform_tensor({config.filters, config.filters, w},
                                   std::sqrt(6.0 / static_cast<double>(config.filters * w)), rng);
  p.conv2.bias = Tensor({config.filters});
  p.norm.gamma = Tensor::filled({d}, 1.0);
  p.norm.beta = Tensor({d});
  p.norm_state.running_mean = Tensor({d});
  p.norm_state.running_var = Tensor::filled({d}, 1.0);
  const double head_bound = std::sqrt(3.0 / static_cast<double>(d));
  p.head.logits.weights = uniform_tensor({config.classes, d}, head_bound, rng);
  p.head.logits.bias = Tensor({config.classes});
  p.head.log_variance.weights = uniform_tensor({k, d}, head_bound, rng);
  p.head.log_variance.bias = Tensor({k});
  return p;
}

Tensor network_forward(const NetworkConfig& config, ModelParams& params, const Tensor& input, Mode mode,
                       RngStream* dropout_rng, ForwardCache& cache) {
  if (input.rank() != 3 || input.extent(0) != config.in_channels || input.extent(2) != config.time_steps) {
    throw DimensionError("network_forward: input " + shape_string(input.shape()) + " does not match [" +
                         std::to_string(config.in_channels) + ", B, " + std::to_string(config.time_steps) + "]");
  }
  Tensor h = relu_forward(conv1d_forward(input, params.conv1, cache.conv1), cache.relu1);
  h = relu_forward(conv1d_forward(h, params.conv2, cache.conv2), cache.relu2);
  h = dropout_forward(h, config.keep_prob, mode, mode == Mode::Training ? dropout_rng : nullptr, cache.dropout);
  h = max_pool1d_forward(h, config.effective_pool_window(), cache.pool);
  cache.pooled_shape = h.shape();
  h = flatten_pooled(h);
  if (config.batch_norm) {
    h = batch_norm1d_forward(h, params.norm, params.norm_state, mode, cache.norm);
  }
  return h;
}

Tensor network_features(const NetworkConfig& config, const ModelParams& params, const Tensor& input) {
  ModelParams& unchanged = const_cast<ModelParams&>(params);  // inference mode never writes
  ForwardCache cache;
  return network_forward(config, unchanged, input, Mode::Inference, nullptr, cache);
}

void network_backward(const NetworkConfig& config, const ModelParams& params, const Tensor& grad_features,
                      const ForwardCache& cache, ModelParams& grads) {
  Tensor g = grad_features;
  if (config.batch_norm) {
    auto bn = batch_norm1d_backward(g, params.norm, cache.norm);
    add_into(grads.norm.gamma, bn.params.gamma);
    add_into(grads.norm.beta, bn.params.beta);
    g = std::move(bn.input);
  }
  g = unflatten_pooled(g, cache.pooled_shape);
  g = max_pool1d_backward(g, cache.pool);
  g = dropout_backward(g, cache.dropout);
  g = relu_backward(g, cache.relu2);
  auto c2 = conv1d_backward(g, params.conv2, cache.conv2);
  add_into(grads.conv2.kernels, c2.params.kernels);
  add_into(grads.conv2.bias, c2.params.bias);
  g = relu_backward(c2.input, cache.relu1);
  auto c1 = conv1d_backward(g, params.conv1, cache.conv1);
  add_into(grads.conv1.kernels, c1.params.kernels);
  add_into(grads.conv1.bias, c1.params.bias);
}

}  // namespace aleatoric
