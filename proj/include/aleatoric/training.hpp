#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aleatoric/adam.hpp"
#include "aleatoric/bayes_head.hpp"
#include "aleatoric/container.hpp"
#include "aleatoric/metrics.hpp"
#include "aleatoric/network.hpp"

namespace aleatoric {

enum class Variant { Bayesian, Benchmark };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 100;
  std::size_t mc_samples = 100;
  LossWeights loss_weights;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  /// Inverse-frequency class weights in the loss; off by default.
  bool class_weighting = false;
  /// MC samples and eps seed used when scoring (validation and evaluation).
  std::size_t eval_mc_samples = 100;
  std::uint64_t eval_seed = 0x5EED;
};

void validate(const TrainConfig& config);

/// Network-ready examples: each input is [in_channels, time].
struct LabeledSet {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
  std::vector<std::uint64_t> ids;

  std::size_t size() const { return inputs.size(); }
};

/// Stacks the selected examples into a [C, B, T] batch.
Tensor gather_batch(const LabeledSet& set, std::span<const std::size_t> rows);

struct Model {
  NetworkConfig network;
  ModelParams params;
  Variant variant = Variant::Bayesian;
};

/// Inference for every example. The MC draws of example i come from
/// RngStream::derive(eval_seed, "mc-eval", ids[i]), so a prediction depends
/// only on the instance, never on batch composition. Benchmark models return
/// softmax(Wx) and zero variance.
std::vector<Prediction> predict_all(const Model& model, const LabeledSet& set, std::size_t samples,
                                    std::uint64_t eval_seed);

std::vector<ScoredInstance> score(const Model& model, const LabeledSet& set, std::size_t samples,
                                  std::uint64_t eval_seed);

struct StepResult {
  double loss = 0.0;
  ModelParams grads;
};

/// Mean batch loss and its gradient w.r.t. every trainable tensor. Runs the
/// trunk in training mode; a frozen dropout mask in `cache` is reused.
StepResult loss_and_gradient(const NetworkConfig& network, ModelParams& params, const Tensor& input,
                             std::span<const int> labels, const Tensor& noise, LossWeights weights,
                             std::span<const double> class_weights, RngStream* dropout_rng, ForwardCache& cache);

/// Mutable training state for one model: parameters, Adam moments, step
/// counter and the per-purpose rng streams.
class Trainer {
 public:
  Trainer(NetworkConfig network, TrainConfig config, Variant variant, std::uint64_t member = 0);
  Trainer(NetworkConfig network, TrainConfig config, Variant variant, ModelParams initial, std::uint64_t member = 0);

  /// One Adam step on a batch; returns the batch loss before the update.
  double step(const Tensor& input, std::span<const int> labels);

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }
  std::size_t steps() const { return steps_; }
  Model model() const { return {network_, params_, variant_}; }

  RngStream& shuffle_rng() { return shuffle_rng_; }
  RngStream& dropout_rng() { return dropout_rng_; }
  RngStream& noise_rng() { return noise_rng_; }

  std::vector<double> class_weights;

 private:
  friend struct Checkpoint;
  NetworkConfig network_;
  TrainConfig config_;
  Variant variant_;
  ModelParams params_;
  std::vector<AdamMoments> moments_;
  std::size_t steps_ = 0;
  RngStream shuffle_rng_;
  RngStream dropout_rng_;
  RngStream noise_rng_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
};

/// Training log line: {"epoch":E,"train_loss":L,"val_auc":A}
std::string format_epoch_log(const EpochLog& log);

struct Checkpoint {
  NetworkConfig network;
  TrainConfig config;
  Variant variant = Variant::Bayesian;
  std::uint64_t member = 0;
  ModelParams params;
  std::vector<AdamMoments> moments;
  std::size_t steps = 0;
  std::size_t epoch = 0;
  double val_auc = 0.0;
  RngStream::State shuffle_rng, dropout_rng, noise_rng;
  /// Free-form JSON carried along (the CLI stores the fitted feature schema).
  std::string extra = "{}";

  Model model() const { return {network, params, variant}; }

  static Checkpoint capture(const Trainer& trainer, const NetworkConfig& network, const TrainConfig& config,
                            Variant variant, std::uint64_t member);

  TensorTable to_table() const;
  static Checkpoint from_table(const TensorTable& table);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> curve;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch Adam with per-epoch validation AUC; keeps the best epoch and
/// stops after `patience` epochs without improvement. The member index
/// selects the rng sub-streams, so ensemble members differ only through it.
TrainResult train(const LabeledSet& train_set, const LabeledSet& val_set, const NetworkConfig& network,
                  const TrainConfig& config, Variant variant, std::uint64_t member = 0,
                  const EpochCallback& on_epoch = {});

/// n independent members (0 .. n-1), trained on up to `threads` threads.
/// Results are ordered by member regardless of scheduling.
std::vector<TrainResult> train_ensemble(const LabeledSet& train_set, const LabeledSet& val_set,
                                        const NetworkConfig& network, const TrainConfig& config, Variant variant,
                                        std::size_t members, std::size_t threads = 1);

}  // namespace aleatoric
