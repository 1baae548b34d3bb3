#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "triskelion/autodiff.hpp"
#include "triskelion/ops.hpp"
#include "triskelion/rng.hpp"
#include "triskelion/tensor.hpp"

// Shared convolutional encoder with a Gaussian latent, an MLP classifier
// head on the latent, and a transposed-convolution decoder.
//
//   encoder  1x28x28 -conv k3 s2 p1-> 32x14x14 -> 64x7x7 -> 128x4x4 (each Conv-BN-ReLU)
//            flatten 2048 -> linear -> 64 = [mu | logvar], logvar clamped to [-30, 20]
//   latent   z = mu + exp(logvar/2) * eps (train), z = mu (eval)
//   classify 32 -> 128 -> ReLU -> dropout(0.2) -> 10 logits
//   decode   32 -> 2048 -> 128x4x4 -deconv k3 s2 p1-> 64x7x7 -ReLU-> k4 s2 p1 32x14x14
//            -ReLU-> k4 s2 p1 1x28x28 -> sigmoid
namespace triskelion::model {

inline constexpr std::size_t kLatentDim = 32;
inline constexpr std::size_t kClasses = 10;
inline constexpr std::size_t kClassifierHidden = 128;
inline constexpr double kDropout = 0.2;
inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

enum class Init { HeNormal, Zero, One };
enum class Group { Encoder, Classifier, Decoder };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  std::size_t fan_in;  // only meaningful for HeNormal
  Group group;
};

// Learnable tensors in construction order.
const std::vector<ParamSpec>& architecture();
// Batch-norm running statistics: "<bn>.running_mean" (0) and "<bn>.running_var" (1).
const std::vector<ParamSpec>& buffer_specs();

Group group_of(const std::string& name);

template <typename T>
struct ParamSet {
  std::map<std::string, Tensor<T>> weights;
  std::map<std::string, Tensor<T>> buffers;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [k, v] : weights) out.weights.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : buffers) out.buffers.emplace(k, v.template cast<U>());
    return out;
  }
};

using ModelParams = ParamSet<float>;

// He-normal weights (std = sqrt(2 / fan_in)) drawn in architecture order
// from Rng(seed); zero biases; gamma 1, beta 0; running mean 0, var 1.
ModelParams init_params(std::uint64_t seed);

std::size_t parameter_count(const ModelParams& params);

// ShapeMismatch unless names and shapes match the architecture exactly.
void validate(const ModelParams& params);

using Bound = std::map<std::string, Var>;

template <typename T>
Bound bind(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad = true);

template <typename T>
struct LatentVars {
  Var mu;
  Var logvar;
  Var z;
  Tensor<T> eps;
};

struct ForwardOptions {
  ops::Mode mode = ops::Mode::Train;
  bool classify = true;
  bool decode = true;
};

template <typename T>
struct ForwardVars {
  LatentVars<T> latent;
  std::optional<Var> logits;
  std::optional<Var> xhat;
};

// x: B×1×28×28. Returns (mu, logvar), each B×32. Train mode updates the
// batch-norm running statistics in `buffers`.
template <typename T>
std::pair<Var, Var> encode(Tape<T>& tape, const Bound& p, std::map<std::string, Tensor<T>>& buffers, Var x,
                           ops::Mode mode);

template <typename T>
LatentVars<T> reparameterize(Tape<T>& tape, Var mu, Var logvar, Rng& rng, ops::Mode mode);

template <typename T>
Var classify(Tape<T>& tape, const Bound& p, Var z, Rng& rng, ops::Mode mode);

template <typename T>
Var decode(Tape<T>& tape, const Bound& p, Var z);

// Full pass. Random draws happen in a fixed order: eps, then the dropout mask.
// The classifier consumes z (train) or mu (eval).
template <typename T>
ForwardVars<T> forward(Tape<T>& tape, const Bound& p, std::map<std::string, Tensor<T>>& buffers, Var x, Rng& rng,
                       ForwardOptions options);

// Eval-mode inference without gradient recording.
struct Inference {
  Tensor<float> mu;
  Tensor<float> logvar;
  std::optional<Tensor<float>> logits;
  std::optional<Tensor<float>> xhat;
};

Inference infer(const ModelParams& params, const Tensor<float>& x, bool with_logits = true, bool with_xhat = true);

}  // namespace triskelion::model
