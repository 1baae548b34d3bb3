#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "triskelion/autodiff.hpp"
#include "triskelion/rng.hpp"
#include "triskelion/tensor.hpp"

// Differentiable operations. Each forward records one node on the tape whose
// backward rule accumulates d(loss)/d(input) for every input that requires
// gradient. Shapes never broadcast except for the per-channel / per-feature
// bias adds inside conv and linear.
namespace triskelion::ops {

enum class Mode { Train, Eval };

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed convolution only
};

std::size_t conv2d_output_extent(std::size_t in, std::size_t kernel, const Conv2dGeometry& g);
std::size_t conv_transpose2d_output_extent(std::size_t in, std::size_t kernel, const Conv2dGeometry& g);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor);

// Sum of all elements, as a scalar.
template <typename T>
Var sum(Tape<T>& tape, Var a);

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape);

// Columns [begin, begin+count) of a B×F matrix.
template <typename T>
Var slice_columns(Tape<T>& tape, Var a, std::size_t begin, std::size_t count);

// Elementwise clamp; gradient passes only strictly inside (lo, hi).
template <typename T>
Var clamp(Tape<T>& tape, Var a, T lo, T hi);

// input B×F, weight G×F, bias G -> B×G.
template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, Var bias);

// input B×Cin×H×W, weight Cout×Cin×k×k, bias Cout.
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, Conv2dGeometry geometry);

// input B×Cin×H×W, weight Cin×Cout×k×k, bias Cout.
template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var input, Var weight, Var bias, Conv2dGeometry geometry);

struct BatchNormOptions {
  Mode mode = Mode::Train;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Running statistics are read in eval mode and updated in train mode
// (running <- (1 - momentum) * running + momentum * batch; the batch
// variance fed to the running estimate is the unbiased one).
template <typename T>
Var batchnorm2d(Tape<T>& tape, Var input, Var gamma, Var beta, Tensor<T>& running_mean,
                Tensor<T>& running_var, BatchNormOptions options);

// ReLU with subgradient 0 at the origin.
template <typename T>
Var relu(Tape<T>& tape, Var a);

template <typename T>
Var sigmoid(Tape<T>& tape, Var a);

// Inverted dropout: survivors are scaled by 1/(1-p). Identity in eval mode.
template <typename T>
Var dropout(Tape<T>& tape, Var a, double p, Rng& rng, Mode mode);

// z = mu + exp(logvar / 2) * eps with a caller-provided noise tensor.
template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var logvar, const Tensor<T>& eps);

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels);

// Mean over all elements of (a - b)^2.
template <typename T>
Var mse(Tape<T>& tape, Var a, Var b);

// Per sample 0.5 * sum_j (mu^2 + exp(logvar) - logvar - 1), mean over batch.
template <typename T>
Var gaussian_kld(Tape<T>& tape, Var mu, Var logvar);

// Mean over rows of the squared distance to the batch-mean row. Zero for B = 1.
template <typename T>
Var latent_variance(Tape<T>& tape, Var latents);

}  // namespace triskelion::ops
