#include "aleatoric/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace aleatoric {

using nlohmann::json;

std::string to_string(Variant v) { return v == Variant::Bayesian ? "bayesian" : "benchmark"; }

Variant variant_from_string(const std::string& s) {
  if (s == "bayesian") return Variant::Bayesian;
  if (s == "benchmark") return Variant::Benchmark;
  throw ConfigError("unknown variant '" + s + "' (expected bayesian|benchmark)");
}

void validate(const AdamConfig& config) {
  if (!(config.learning_rate > 0.0)) throw DomainError("adam: learning_rate must be > 0");
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0) || !(config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw DomainError("adam: betas must lie in [0, 1)");
  }
  if (!(config.epsilon > 0.0)) throw DomainError("adam: epsilon must be > 0");
}

void adam_step(Tensor& param, const Tensor& grad, AdamMoments& moments, std::size_t t, const AdamConfig& config) {
  if (t < 1) throw DomainError("adam_step: step index starts at 1");
  if (grad.shape() != param.shape() || moments.m.shape() != param.shape() || moments.v.shape() != param.shape()) {
    throw DimensionError("adam_step: parameter " + shape_string(param.shape()) + " vs gradient " +
                         shape_string(grad.shape()));
  }
  adam_update(param.flat(), grad.flat(), moments.m.flat(), moments.v.flat(), t, config);
  param.check_finite("adam_step");
}

void validate(const TrainConfig& config) {
  validate(config.adam);
  if (config.batch_size == 0) throw DomainError("train: batch_size must be >= 1");
  if (config.max_epochs == 0) throw DomainError("train: max_epochs must be >= 1");
  if (config.mc_samples == 0 || config.eval_mc_samples == 0) throw DomainError("train: mc samples must be >= 1");
  if (config.loss_weights.bayes < 0.0 || config.loss_weights.ce < 0.0) {
    throw DomainError("train: loss weights must be >= 0");
  }
}

Tensor gather_batch(const LabeledSet& set, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DomainError("gather_batch: empty selection");
  const Tensor& first = set.inputs.at(rows[0]);
  const std::size_t channels = first.extent(0), time = first.extent(1), batch = rows.size();
  Tensor out({channels, batch, time});
  double* dst = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor& x = set.inputs.at(rows[b]);
    if (x.shape() != first.shape()) throw DimensionError("gather_batch: inconsistent example shapes");
    const double* src = x.data();
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(src + c * time, time, dst + (c * batch + b) * time);
    }
  }
  return out;
}

std::vector<Prediction> predict_all(const Model& model, const LabeledSet& set, std::size_t samples,
                                    std::uint64_t eval_seed) {
  constexpr std::size_t kChunk = 256;
  std::vector<Prediction> out;
  out.reserve(set.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < set.size(); start += kChunk) {
    const std::size_t stop = std::min(set.size(), start + kChunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const Tensor features = network_features(model.network, model.params, gather_batch(set, rows));
    const auto fm = features.matrix();
    for (std::size_t j = 0; j < rows.size(); ++j) {
      const Vector x = fm.col(static_cast<Eigen::Index>(j));
      if (model.variant == Variant::Benchmark) {
        Prediction p;
        p.probs = softmax(head_logits(x, model.params.head));
        p.mc_samples = 0;
        out.push_back(std::move(p));
      } else {
        RngStream rng = RngStream::derive(eval_seed, "mc-eval", set.ids[rows[j]]);
        out.push_back(predict(x, model.params.head, samples, rng));
      }
    }
  }
  return out;
}

std::vector<ScoredInstance> score(const Model& model, const LabeledSet& set, std::size_t samples,
                                  std::uint64_t eval_seed) {
  const auto preds = predict_all(model, set, samples, eval_seed);
  std::vector<ScoredInstance> out(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    out[i] = {set.ids[i], set.labels[i], preds[i].probs[1], preds[i].aleatoric_variance};
  }
  return out;
}

StepResult loss_and_gradient(const NetworkConfig& network, ModelParams& params, const Tensor& input,
                             std::span<const int> labels, const Tensor& noise, LossWeights weights,
                             std::span<const double> class_weights, RngStream* dropout_rng, ForwardCache& cache) {
  const Tensor features = network_forward(network, params, input, Mode::Training, dropout_rng, cache);
  auto head = head_loss_and_gradient(features, labels, params.head, noise, weights, class_weights);
  StepResult r;
  r.loss = head.loss;
  r.grads = zeros_like(params);
  r.grads.head = std::move(head.grad);
  network_backward(network, params, head.grad_features, cache, r.grads);
  return r;
}

Trainer::Trainer(NetworkConfig network, TrainConfig config, Variant variant, std::uint64_t member)
    : Trainer(network, config, variant,
              [&] {
                RngStream init = RngStream::derive(config.seed, "init", member);
                return init_params(network, init);
              }(),
              member) {}

Trainer::Trainer(NetworkConfig network, TrainConfig config, Variant variant, ModelParams initial,
                 std::uint64_t member)
    : network_(network),
      config_(config),
      variant_(variant),
      params_(std::move(initial)),
      shuffle_rng_(RngStream::derive(config.seed, "shuffle", member)),
      dropout_rng_(RngStream::derive(config.seed, "dropout", member)),
      noise_rng_(RngStream::derive(config.seed, "mc-noise", member)) {
  validate(network_);
  validate(config_);
  validate(params_.head);
  for (auto& [name, t] : params_.trainable()) moments_.push_back(AdamMoments::zeros_like(*t));
}

double Trainer::step(const Tensor& input, std::span<const int> labels) {
  LossWeights weights = config_.loss_weights;
  if (variant_ == Variant::Benchmark) weights.bayes = 0.0;
  Tensor noise;
  if (weights.bayes > 0.0) {
    noise = sample_standard_normal(noise_rng_, {labels.size(), config_.mc_samples, network_.classes});
  }
  ForwardCache cache;
  StepResult r =
      loss_and_gradient(network_, params_, input, labels, noise, weights, class_weights, &dropout_rng_, cache);
  if (!std::isfinite(r.loss)) throw NumericError("non-finite loss");

  ++steps_;
  auto params = params_.trainable();
  auto grads = r.grads.trainable();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const bool detached = variant_ == Variant::Benchmark && params[k].first.starts_with("head.log_variance");
    if (detached) continue;
    adam_step(*params[k].second, *grads[k].second, moments_[k], steps_, config_.adam);
  }
  return r.loss;
}

std::string format_epoch_log(const EpochLog& log) {
  json j;
  j["epoch"] = log.epoch;
  j["train_loss"] = log.train_loss;
  j["val_auc"] = log.val_auc;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json to_json(const NetworkConfig& n) {
  return {{"in_channels", n.in_channels}, {"time_steps", n.time_steps},     {"filters", n.filters},
          {"kernel_width", n.kernel_width}, {"keep_prob", n.keep_prob},       {"pool_window", n.pool_window},
          {"batch_norm", n.batch_norm},     {"classes", n.classes},           {"per_class_sigma", n.per_class_sigma}};
}

NetworkConfig network_from_json(const json& j) {
  NetworkConfig n;
  n.in_channels = j.at("in_channels");
  n.time_steps = j.at("time_steps");
  n.filters = j.at("filters");
  n.kernel_width = j.at("kernel_width");
  n.keep_prob = j.at("keep_prob");
  n.pool_window = j.at("pool_window");
  n.batch_norm = j.at("batch_norm");
  n.classes = j.at("classes");
  n.per_class_sigma = j.at("per_class_sigma");
  return n;
}

json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"mc_samples", c.mc_samples},
          {"loss_weight_bayes", c.loss_weights.bayes},
          {"loss_weight_ce", c.loss_weights.ce},
          {"patience", c.patience},
          {"seed", c.seed},
          {"class_weighting", c.class_weighting},
          {"eval_mc_samples", c.eval_mc_samples},
          {"eval_seed", c.eval_seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.adam.learning_rate = j.at("learning_rate");
  c.adam.beta1 = j.at("beta1");
  c.adam.beta2 = j.at("beta2");
  c.adam.epsilon = j.at("epsilon");
  c.batch_size = j.at("batch_size");
  c.max_epochs = j.at("max_epochs");
  c.mc_samples = j.at("mc_samples");
  c.loss_weights.bayes = j.at("loss_weight_bayes");
  c.loss_weights.ce = j.at("loss_weight_ce");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.class_weighting = j.at("class_weighting");
  c.eval_mc_samples = j.at("eval_mc_samples");
  c.eval_seed = j.at("eval_seed");
  return c;
}

json to_json(const RngStream::State& s) {
  return {{"words", s.words}, {"has_spare", s.has_spare}, {"spare_bits", std::bit_cast<std::uint64_t>(s.spare)}};
}

RngStream::State rng_state_from_json(const json& j) {
  RngStream::State s;
  s.words = j.at("words").get<std::array<std::uint64_t, 4>>();
  s.has_spare = j.at("has_spare");
  s.spare = std::bit_cast<double>(j.at("spare_bits").get<std::uint64_t>());
  return s;
}

ModelParams skeleton(const NetworkConfig& network) {
  RngStream dummy(0);
  return init_params(network, dummy);
}

}  // namespace

Checkpoint Checkpoint::capture(const Trainer& trainer, const NetworkConfig& network, const TrainConfig& config,
                               Variant variant, std::uint64_t member) {
  Checkpoint c;
  c.network = network;
  c.config = config;
  c.variant = variant;
  c.member = member;
  c.params = trainer.params_;
  c.moments = trainer.moments_;
  c.steps = trainer.steps_;
  c.shuffle_rng = trainer.shuffle_rng_.state();
  c.dropout_rng = trainer.dropout_rng_.state();
  c.noise_rng = trainer.noise_rng_.state();
  return c;
}

TensorTable Checkpoint::to_table() const {
  json meta;
  meta["kind"] = "checkpoint";
  meta["network"] = to_json(network);
  meta["config"] = to_json(config);
  meta["variant"] = to_string(variant);
  meta["member"] = member;
  meta["steps"] = steps;
  meta["epoch"] = epoch;
  meta["val_auc_bits"] = std::bit_cast<std::uint64_t>(val_auc);
  meta["val_auc"] = val_auc;
  meta["rng"] = {{"shuffle", to_json(shuffle_rng)}, {"dropout", to_json(dropout_rng)}, {"noise", to_json(noise_rng)}};
  meta["extra"] = json::parse(extra);

  TensorTable table;
  table.metadata = meta.dump();
  for (const auto& [name, t] : params.named_tensors()) table.tensors.emplace_back("param/" + name, *t);
  auto names = const_cast<ModelParams&>(params).trainable();
  for (std::size_t k = 0; k < moments.size(); ++k) {
    table.tensors.emplace_back("adam_m/" + names[k].first, moments[k].m);
    table.tensors.emplace_back("adam_v/" + names[k].first, moments[k].v);
  }
  return table;
}

Checkpoint Checkpoint::from_table(const TensorTable& table) {
  const json meta = json::parse(table.metadata);
  if (meta.value("kind", "") != "checkpoint") throw IoError("tensor table is not a checkpoint");
  Checkpoint c;
  c.network = network_from_json(meta.at("network"));
  c.config = train_config_from_json(meta.at("config"));
  c.variant = variant_from_string(meta.at("variant"));
  c.member = meta.at("member");
  c.steps = meta.at("steps");
  c.epoch = meta.at("epoch");
  c.val_auc = std::bit_cast<double>(meta.at("val_auc_bits").get<std::uint64_t>());
  c.shuffle_rng = rng_state_from_json(meta.at("rng").at("shuffle"));
  c.dropout_rng = rng_state_from_json(meta.at("rng").at("dropout"));
  c.noise_rng = rng_state_from_json(meta.at("rng").at("noise"));
  c.extra = meta.at("extra").dump();

  c.params = skeleton(c.network);
  for (auto& [name, t] : c.params.named_tensors()) {
    const Tensor& stored = table.at("param/" + name);
    if (stored.shape() != t->shape()) throw IoError("checkpoint: tensor '" + name + "' has unexpected shape");
    *t = stored;
  }
  for (auto& [name, t] : c.params.trainable()) {
    if (!table.contains("adam_m/" + name)) break;
    c.moments.push_back({table.at("adam_m/" + name), table.at("adam_v/" + name)});
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { save_table(path, to_table()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return from_table(load_table(path)); }

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.params == b.params) || a.moments.size() != b.moments.size()) return false;
  for (std::size_t k = 0; k < a.moments.size(); ++k) {
    if (!(a.moments[k].m == b.moments[k].m) || !(a.moments[k].v == b.moments[k].v)) return false;
  }
  return a.to_table().metadata == b.to_table().metadata;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const NetworkConfig& network,
                  const TrainConfig& config, Variant variant, std::uint64_t member, const EpochCallback& on_epoch) {
  if (train_set.size() == 0) throw DomainError("train: empty training set");
  if (val_set.size() == 0) throw DomainError("train: empty validation set");
  validate(config);

  Trainer trainer(network, config, variant, member);
  if (config.class_weighting) {
    std::vector<double> counts(network.classes, 0.0);
    for (int y : train_set.labels) counts.at(static_cast<std::size_t>(y)) += 1.0;
    const double n = static_cast<double>(train_set.size());
    for (double& c : counts) c = c > 0.0 ? n / (static_cast<double>(network.classes) * c) : 0.0;
    trainer.class_weights = counts;
  }

  TrainResult result;
  bool have_best = false;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  std::vector<int> labels;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[trainer.shuffle_rng().next_u64() % (i + 1)]);
    }
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::span<const std::size_t> rows(order.data() + start,
                                              std::min(config.batch_size, order.size() - start));
      labels.clear();
      for (std::size_t r : rows) labels.push_back(train_set.labels[r]);
      double loss = 0.0;
      try {
        loss = trainer.step(gather_batch(train_set, rows), labels);
      } catch (const NumericError& e) {
        throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + ": " + e.what());
      }
      loss_sum += loss * static_cast<double>(rows.size());
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    const auto scored = score(trainer.model(), val_set, config.eval_mc_samples, config.eval_seed);
    log.val_auc = auc(scored);
    result.curve.push_back(log);
    if (on_epoch) on_epoch(log);

    if (!have_best || log.val_auc > result.best.val_auc) {
      result.best = Checkpoint::capture(trainer, network, config, variant, member);
      result.best.epoch = epoch;
      result.best.val_auc = log.val_auc;
      have_best = true;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

std::vector<TrainResult> train_ensemble(const LabeledSet& train_set, const LabeledSet& val_set,
                                        const NetworkConfig& network, const TrainConfig& config, Variant variant,
                                        std::size_t members, std::size_t threads) {
  if (members == 0) throw DomainError("train_ensemble: need at least one member");
  std::vector<TrainResult> results(members);
  std::vector<std::exception_ptr> errors(members);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t m = next++; m < members; m = next++) {
      try {
        results[m] = train(train_set, val_set, network, config, variant, m);
      } catch (...) {
        errors[m] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, members);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace aleatoric
