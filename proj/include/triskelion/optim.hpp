#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "triskelion/data.hpp"
#include "triskelion/losses.hpp"
#include "triskelion/model.hpp"

namespace triskelion::optim {

enum class TrainMode { Unified, PredictiveOnly, GenerativeOnly };

std::string to_string(TrainMode mode);
// InvalidArgument for anything but unified | predictive_only | generative_only.
TrainMode parse_mode(const std::string& text);

// Unified keeps the configured weights; the baselines train one branch
// with weight 1 and silence the others.
losses::LossWeights effective_weights(TrainMode mode, const losses::LossWeights& configured);

struct TrainConfig {
  TrainMode mode = TrainMode::Unified;
  losses::LossWeights weights;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  std::uint64_t seed = 42;
  std::size_t subset = 0;  // 0 = full training set
  std::string preset = "none";
  std::string train_images, train_labels, test_images, test_labels;

  void validate() const;
};

// Named presets. "desk": 10k-sample training subset, 5 epochs.
// "paper": full set, 20 epochs. InvalidArgument for unknown names.
TrainConfig preset_config(const std::string& name);

// Canonical key=value form, shared by manifests and checkpoints.
std::map<std::string, std::string> to_key_values(const TrainConfig& config);
TrainConfig from_key_values(const std::map<std::string, std::string>& kv);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const std::map<std::string, Tensor<float>>& params);
};

// One bias-corrected Adam update of every parameter named in `grads`.
// NameMismatch if a gradient has no matching parameter (or shape);
// NonFiniteGradient if any gradient value is NaN/Inf.
void adam_step(std::map<std::string, Tensor<float>>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, const AdamHyper& hyper);

// One forward pass plus the composite loss, built on its own tape.
template <typename T>
struct StepGraph {
  Tape<T> tape;
  model::Bound params;
  Var x;
  model::ForwardVars<T> forward;
  losses::TriVars loss;
  losses::LossWeights weights;
};

template <typename T>
std::unique_ptr<StepGraph<T>> build_step(const model::ParamSet<T>& params, std::map<std::string, Tensor<T>>& buffers,
                                         const data::Batch& batch, TrainMode mode,
                                         const losses::LossWeights& configured, Rng& rng,
                                         ops::Mode net_mode = ops::Mode::Train);

// Gradients of `root` for every parameter the sweep reached.
template <typename T>
std::map<std::string, Tensor<T>> parameter_gradients(const StepGraph<T>& graph, Var root);

// Dropout and reparameterization noise for (epoch, batch) derive from the
// root seed alone, so an interrupted run resumes on the same stream.
std::uint64_t step_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch);

struct EpochLog {
  std::size_t epoch = 0;
  losses::LossBreakdown losses;
  double seconds = 0.0;
};

struct TestMetrics {
  double accuracy = 0.0;
  double recon_mse = 0.0;
  double latent_ari = 0.0;
};

struct RunReport {
  std::vector<EpochLog> epochs;
  std::optional<double> initial_batch_total;
  std::optional<TestMetrics> test;
};

struct TrainState {
  model::ModelParams params;
  AdamState adam;
  std::size_t epochs_done = 0;
};

TrainState initial_state(const TrainConfig& config);

using EpochCallback = std::function<void(const EpochLog&, const TrainState&)>;

// Runs epochs state.epochs_done .. config.epochs-1 in place. The training
// set is truncated to config.subset first when that is non-zero.
RunReport train(const TrainConfig& config, const data::RawDataset& train_set, TrainState& state,
                const EpochCallback& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  double recon_mse = 0.0;
  Tensor<float> mu;  // N×32
  Tensor<float> logits;  // N×10
};

// Eval mode (eps = 0, no dropout, running batch-norm statistics).
EvalResult evaluate(const model::ModelParams& params, const data::RawDataset& test_set,
                    std::size_t chunk = 500);

struct TrainOutcome {
  RunReport report;
  TrainState state;
};

// Fresh initialization, full training, then test metrics (accuracy,
// reconstruction MSE, latent ARI) when a test set is given.
TrainOutcome train(const TrainConfig& config, const data::RawDataset& train_set,
                   const data::RawDataset* test_set, const EpochCallback& on_epoch = {});

}  // namespace triskelion::optim
