#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aleatoric/layers.hpp"
#include "aleatoric/network.hpp"
#include "support.hpp"

using namespace aleatoric;

namespace {

Conv1dParams random_conv(std::size_t out, std::size_t in, std::size_t width, RngStream& rng) {
  return {test::random_tensor({out, in, width}, rng), test::random_tensor({out}, rng)};
}

// Direct convolution, zero "same" padding, input [C, B, T].
Tensor loop_conv(const Tensor& x, const Conv1dParams& p) {
  const std::size_t in = x.extent(0), batch = x.extent(1), time = x.extent(2);
  const std::size_t out = p.out_channels(), width = p.width();
  const long pad = static_cast<long>(width / 2);
  Tensor y({out, batch, time});
  for (std::size_t o = 0; o < out; ++o) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < time; ++t) {
        double acc = p.bias[o];
        for (std::size_t i = 0; i < in; ++i) {
          for (std::size_t w = 0; w < width; ++w) {
            const long s = static_cast<long>(t) + static_cast<long>(w) - pad;
            if (s >= 0 && s < static_cast<long>(time)) acc += p.kernels(o, i, w) * x(i, b, static_cast<std::size_t>(s));
          }
        }
        y(o, b, t) = acc;
      }
    }
  }
  return y;
}

// Scalar loss <c, f(.)> for gradient checks.
double dot(const Tensor& a, const Tensor& b) { return a.flat().dot(b.flat()); }

}  // namespace

TEST_CASE("conv1d: worked examples") {
  Conv1dCache cache;
  Conv1dParams center{Tensor({1, 1, 3}, {0, 1, 0}), Tensor({1}, {0})};
  const Tensor y = conv1d_forward(Tensor({1, 4}, {1, 2, 3, 4}), center, cache);
  CHECK(y == Tensor({1, 4}, {1, 2, 3, 4}));
  Conv1dParams ones{Tensor({1, 1, 3}, {1, 1, 1}), Tensor({1}, {0})};
  CHECK(conv1d_forward(Tensor::filled({1, 4}, 1.0), ones, cache) == Tensor({1, 4}, {2, 3, 3, 2}));
}

TEST_CASE("conv1d: loop oracle, errors") {
  RngStream rng(1);
  for (int rep = 0; rep < 10; ++rep) {
    const Tensor x = test::random_tensor({3, 2, 9}, rng);
    const Conv1dParams p = random_conv(4, 3, rep % 2 == 0 ? 3 : 5, rng);
    Conv1dCache cache;
    const Tensor y = conv1d_forward(x, p, cache);
    const Tensor o = loop_conv(x, p);
    REQUIRE(y.shape() == o.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(o[i]).epsilon(1e-14));
  }
  Conv1dCache cache;
  const Conv1dParams p = random_conv(2, 3, 3, rng);
  CHECK_THROWS_AS(conv1d_forward(Tensor({2, 1, 5}), p, cache), DimensionError);
  CHECK_THROWS_AS(conv1d_forward(Tensor({3, 1, 2}), p, cache), DimensionError);
  CHECK_THROWS_AS(validate(random_conv(2, 3, 2, rng)), DomainError);
  Conv1dCache empty;
  CHECK_THROWS_AS(conv1d_backward(Tensor({2, 1, 5}), p, empty), StateError);
}

TEST_CASE("conv1d is linear in its input") {
  RngStream rng(2);
  const Conv1dParams p = random_conv(3, 2, 3, rng);
  Conv1dParams nobias = p;
  nobias.bias = Tensor({3});
  const Tensor x = test::random_tensor({2, 3, 7}, rng);
  const Tensor z = test::random_tensor({2, 3, 7}, rng);
  const double a = 0.7, b = -1.3;
  Tensor mix(x.shape());
  mix.flat() = a * x.flat() + b * z.flat();
  Conv1dCache c;
  const Tensor lhs = conv1d_forward(mix, nobias, c);
  const Tensor fx = conv1d_forward(x, nobias, c);
  const Tensor fz = conv1d_forward(z, nobias, c);
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * fx[i] + b * fz[i])) < 1e-9);
}

TEST_CASE("conv1d backward: zeros and finite differences") {
  RngStream rng(3);
  Tensor x = test::random_tensor({3, 2, 6}, rng);
  Conv1dParams p = random_conv(2, 3, 3, rng);
  Conv1dCache cache;
  conv1d_forward(x, p, cache);
  const auto zero = conv1d_backward(Tensor({2, 2, 6}), p, cache);
  CHECK(zero.input.flat().isZero(0.0));
  CHECK(zero.params.kernels.flat().isZero(0.0));
  CHECK(zero.params.bias.flat().isZero(0.0));

  const Tensor c = test::random_tensor({2, 2, 6}, rng);
  auto f = [&] {
    Conv1dCache k;
    return dot(c, conv1d_forward(x, p, k));
  };
  conv1d_forward(x, p, cache);
  const auto g = conv1d_backward(c, p, cache);
  CHECK(test::max_rel_err(g.input, test::numeric_gradient(f, x)) < 1e-6);
  CHECK(test::max_rel_err(g.params.kernels, test::numeric_gradient(f, p.kernels)) < 1e-6);
  CHECK(test::max_rel_err(g.params.bias, test::numeric_gradient(f, p.bias)) < 1e-6);
}

TEST_CASE("conv1d backward: scalar product rule") {
  // One channel, width 1: y = k x + b.
  Conv1dParams p{Tensor({1, 1, 1}, {3.0}), Tensor({1}, {0.5})};
  Conv1dCache cache;
  CHECK(conv1d_forward(Tensor({1, 1}, {2.0}), p, cache)[0] == 6.5);
  const auto g = conv1d_backward(Tensor({1, 1}, {1.0}), p, cache);
  CHECK(g.input[0] == 3.0);
  CHECK(g.params.kernels[0] == 2.0);
  CHECK(g.params.bias[0] == 1.0);
}

TEST_CASE("relu") {
  ReluCache cache;
  CHECK(relu_forward(Tensor({2}, {-1, 2}), cache) == Tensor({2}, {0, 2}));
  CHECK(relu_backward(Tensor({2}, {5, 7}), cache) == Tensor({2}, {0, 7}));
  ReluCache empty;
  CHECK_THROWS_AS(relu_backward(Tensor({2}), empty), StateError);
}

TEST_CASE("dropout") {
  RngStream rng(4);
  const Tensor x = test::random_tensor({3, 4, 5}, rng);
  DropoutCache cache;
  CHECK(dropout_forward(x, 1.0, Mode::Training, &rng, cache) == x);
  CHECK(dropout_forward(x, 1.0, Mode::Inference, nullptr, cache) == x);
  CHECK(dropout_forward(x, 0.5, Mode::Inference, nullptr, cache) == x);
  CHECK_THROWS_AS(dropout_forward(x, 0.5, Mode::Inference, &rng, cache), ContractError);
  DropoutCache fresh;
  CHECK_THROWS_AS(dropout_forward(x, 0.5, Mode::Training, nullptr, fresh), ContractError);
  CHECK_THROWS_AS(dropout_forward(x, 0.0, Mode::Training, &rng, fresh), DomainError);

  const Tensor y = dropout_forward(x, 0.5, Mode::Training, &rng, cache);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK((y[i] == 0.0 || y[i] == 2.0 * x[i]));
  cache.frozen = true;
  CHECK(dropout_forward(x, 0.5, Mode::Training, nullptr, cache) == y);
  const Tensor g = dropout_backward(Tensor::filled(x.shape(), 1.0), cache);
  CHECK(g == cache.scale);

  // Inverted dropout keeps the mean: E[y] = x.
  DropoutCache big;
  const Tensor ones = Tensor::filled({100000}, 1.0);
  const Tensor d = dropout_forward(ones, 0.5, Mode::Training, &rng, big);
  CHECK(std::abs(d.flat().mean() - 1.0) < 0.02);
}

TEST_CASE("max pool: ties, routing, windows") {
  MaxPoolCache cache;
  const Tensor y = max_pool1d_forward(Tensor({1, 4}, {3, 1, 3, 2}), 4, cache);
  CHECK(y == Tensor({1, 1}, {3}));
  CHECK(cache.argmax[0] == 0);  // tie -> lowest index
  CHECK(max_pool1d_forward(Tensor({1, 4}, {1, 5, 2, 0}), 2, cache) == Tensor({1, 2}, {5, 2}));
  CHECK_THROWS_AS(max_pool1d_forward(Tensor({1, 4}), 0, cache), DomainError);
  CHECK_THROWS_AS(max_pool1d_forward(Tensor({1, 4}), 5, cache), DomainError);

  RngStream rng(5);
  const Tensor x = test::random_tensor({4, 3, 12}, rng);
  const Tensor p = max_pool1d_forward(x, 12, cache);
  const Tensor g = max_pool1d_backward(Tensor::filled(p.shape(), 1.0), cache);
  // Every upstream entry lands on exactly one input position.
  std::size_t nonzero = 0;
  for (double v : g.values()) {
    CHECK((v == 0.0 || v == 1.0));
    nonzero += v != 0.0;
  }
  CHECK(nonzero == p.size());
  for (std::size_t o = 0; o < p.size(); ++o) CHECK(x[cache.argmax[o]] == p[o]);
}

TEST_CASE("batch norm: zero variance channel and gradients") {
  BatchNormParams p{Tensor::filled({2}, 1.0), Tensor({2})};
  BatchNormState s{Tensor({2}), Tensor::filled({2}, 1.0)};
  BatchNormCache cache;
  // Channel 0 constant over the batch.
  const Tensor x({2, 4}, {3, 3, 3, 3, 1, 2, 3, 4});
  const Tensor y = batch_norm1d_forward(x, p, s, Mode::Training, cache);
  for (std::size_t b = 0; b < 4; ++b) CHECK(y(0, b) == 0.0);
  CHECK(std::abs(y.matrix().row(1).sum()) < 1e-12);
  // Biased variance of {1,2,3,4} is 1.25; running stats move by momentum 0.1.
  CHECK(s.running_mean[1] == doctest::Approx(0.1 * 2.5));
  CHECK(s.running_var[1] == doctest::Approx(0.9 + 0.1 * 1.25));
  CHECK(y(1, 0) == doctest::Approx(-1.5 / std::sqrt(1.25 + kBatchNormEpsilon)));

  BatchNormCache icache;
  const Tensor inf = batch_norm1d_forward(x, p, s, Mode::Inference, icache);
  CHECK(inf(1, 3) == doctest::Approx((4 - s.running_mean[1]) / std::sqrt(s.running_var[1] + kBatchNormEpsilon)));

  RngStream rng(6);
  Tensor xr = test::random_tensor({3, 5}, rng);
  BatchNormParams pr{test::random_tensor({3}, rng), test::random_tensor({3}, rng)};
  const Tensor c = test::random_tensor({3, 5}, rng);
  auto f = [&] {
    BatchNormState st{Tensor({3}), Tensor::filled({3}, 1.0)};
    BatchNormCache k;
    return dot(c, batch_norm1d_forward(xr, pr, st, Mode::Training, k));
  };
  BatchNormState st{Tensor({3}), Tensor::filled({3}, 1.0)};
  BatchNormCache k;
  batch_norm1d_forward(xr, pr, st, Mode::Training, k);
  const auto g = batch_norm1d_backward(c, pr, k);
  CHECK(test::max_rel_err(g.input, test::numeric_gradient(f, xr)) < 1e-6);
  CHECK(test::max_rel_err(g.params.gamma, test::numeric_gradient(f, pr.gamma)) < 1e-6);
  CHECK(test::max_rel_err(g.params.beta, test::numeric_gradient(f, pr.beta)) < 1e-6);
}

TEST_CASE("dense forward/backward") {
  RngStream rng(7);
  DenseParams p{test::random_tensor({2, 4}, rng), test::random_tensor({2}, rng)};
  Tensor x = test::random_tensor({4, 3}, rng);
  DenseCache cache;
  const Tensor y = dense_forward(x, p, cache);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t b = 0; b < 3; ++b) {
      double acc = p.bias[o];
      for (std::size_t i = 0; i < 4; ++i) acc += p.weights(o, i) * x(i, b);
      CHECK(y(o, b) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
  const Tensor c = test::random_tensor({2, 3}, rng);
  auto f = [&] {
    DenseCache k;
    return dot(c, dense_forward(x, p, k));
  };
  const auto g = dense_backward(c, p, cache);
  CHECK(test::max_rel_err(g.input, test::numeric_gradient(f, x)) < 1e-6);
  CHECK(test::max_rel_err(g.params.weights, test::numeric_gradient(f, p.weights)) < 1e-6);
  CHECK(test::max_rel_err(g.params.bias, test::numeric_gradient(f, p.bias)) < 1e-6);
}

TEST_CASE("softmax") {
  CHECK(softmax(Tensor({2}, {0, 0})) == Tensor({2}, {0.5, 0.5}));
  const Tensor big = softmax(Tensor({2}, {1000, 0}));
  CHECK(big.all_finite());
  CHECK(big[0] == 1.0);
  CHECK(big[1] == doctest::Approx(std::exp(-1000.0)).epsilon(1e-12));
  CHECK_THROWS_AS(softmax(Tensor({1}, {3})), DomainError);
  RngStream rng(8);
  for (int rep = 0; rep < 50; ++rep) {
    const Tensor x = test::random_tensor({5}, rng, 10.0);
    Tensor shifted = x;
    const double c = 100.0 * rng.uniform();
    for (auto& v : shifted.values()) v += c;
    const Tensor a = softmax(x), b = softmax(shifted);
    CHECK(std::abs(a.flat().sum() - 1.0) < 1e-12);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(a[i] > 0.0);
      CHECK(std::abs(a[i] - b[i]) < 1e-12);
    }
  }
}

TEST_CASE("network trunk gradient, frozen dropout mask") {
  NetworkConfig cfg;
  cfg.in_channels = 5;
  cfg.time_steps = 8;
  cfg.filters = 4;
  RngStream init(9);
  ModelParams params = init_params(cfg, init);
  RngStream rng(10);
  Tensor x = test::random_tensor({5, 3, 8}, rng);
  RngStream drop(11);
  ForwardCache cache;
  const Tensor feats = network_forward(cfg, params, x, Mode::Training, &drop, cache);
  CHECK(feats.shape() == Shape{cfg.feature_dim(), 3});
  const DropoutCache mask = cache.dropout;
  const Tensor c = test::random_tensor(feats.shape(), rng);

  auto f = [&] {
    ForwardCache k;
    k.dropout = mask;
    k.dropout.frozen = true;
    return dot(c, network_forward(cfg, params, x, Mode::Training, nullptr, k));
  };
  ModelParams grads = zeros_like(params);
  network_backward(cfg, params, c, cache, grads);
  auto named = grads.trainable();
  auto live = params.trainable();
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i].first.rfind("head.", 0) == 0) continue;  // trunk only
    CAPTURE(live[i].first);
    // conv2.bias only shifts a channel that batch norm re-centres: true gradient 0,
    // so both sides are pure roundoff there.
    CHECK(test::max_rel_err(*named[i].second, test::numeric_gradient(f, *live[i].second)) < 1e-4);
    if (live[i].first == "conv2.bias") CHECK(named[i].second->flat().cwiseAbs().maxCoeff() < 1e-12);
  }
}
