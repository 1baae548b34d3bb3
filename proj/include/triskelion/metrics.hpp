#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "triskelion/data.hpp"
#include "triskelion/losses.hpp"
#include "triskelion/model.hpp"
#include "triskelion/optim.hpp"
#include "triskelion/tensor.hpp"

namespace triskelion::metrics {

// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy(const Tensor<float>& logits, std::span<const std::uint8_t> labels);

struct Clustering {
  std::vector<std::size_t> assignments;
  Tensor<double> centers;  // K×d
  double inertia = 0.0;
};

struct KMeansRun {
  Clustering clustering;
  std::vector<double> inertia_history;  // after each assignment step
  std::size_t iterations = 0;
};

// One Lloyd run from k-means++ seeding. Empty clusters are repaired by
// moving the point farthest from its center into them.
KMeansRun kmeans_single(const Tensor<double>& points, std::size_t k, std::size_t max_iters, Rng& rng);

// Best-inertia result over `restarts` runs; restart r uses Rng(mix_seed(seed, r)).
// TooFewPoints if N < K.
Clustering kmeans(const Tensor<double>& points, std::size_t k, std::size_t restarts, std::size_t max_iters,
                  std::uint64_t seed);

// Hubert–Arabie adjusted Rand index from the contingency table. Returns 1
// when the chance-corrected denominator vanishes (e.g. all singletons on
// both sides). LengthMismatch for unequal lengths; InvalidArgument if N < 2.
// Instantiated for std::uint8_t, int and std::size_t labels.
template <typename L>
double adjusted_rand_index(std::span<const L> a, std::span<const L> b);

// k-means (K=10, 10 restarts, 300 iterations) on the latent means, scored
// against the labels.
double latent_ari(const Tensor<float>& mu, std::span<const std::uint8_t> labels, std::uint64_t seed);

struct Projection {
  Tensor<double> coords;       // N×out_dims
  Tensor<double> components;   // out_dims×d, unit rows
  std::vector<double> variances;  // eigenvalues of the sample covariance
  bool degenerate = false;     // covariance of rank 0: all-zero projection
};

// Centered PCA by power iteration with deflation (tolerance 1e-8, at most
// 1000 iterations per component). Each component's largest-magnitude
// entry is positive.
Projection pca_project(const Tensor<double>& points, std::size_t out_dims = 2);

// Flattened gradient of `root` over encoder parameters (name order).
template <typename T>
std::vector<double> encoder_gradient(const optim::StepGraph<T>& graph, Var root);

// nullopt when either vector has norm < 1e-12.
std::optional<double> cosine(std::span<const double> a, std::span<const double> b);

struct BatchAlignment {
  std::optional<double> pred_gen;
  std::optional<double> pred_desc;
  std::optional<double> gen_desc;
};

struct AlignmentReport {
  std::vector<BatchAlignment> batches;
  std::optional<double> mean_pred_gen;
  std::optional<double> mean_pred_desc;
  std::optional<double> mean_gen_desc;
};

// Three backward sweeps (pred, gen, desc) from one train-mode forward pass,
// so eps and dropout masks are shared. Running statistics are not touched.
BatchAlignment gradient_alignment(const model::ModelParams& params, const data::Batch& batch,
                                  const losses::LossWeights& weights, std::uint64_t seed);

AlignmentReport summarize(std::vector<BatchAlignment> batches);

void write_latent_csv(std::ostream& out, const Tensor<float>& mu, std::span<const std::uint8_t> labels);
void write_projection_csv(std::ostream& out, const Tensor<double>& coords, std::span<const std::uint8_t> labels);
void write_alignment_csv(std::ostream& out, const std::vector<BatchAlignment>& batches);

}  // namespace triskelion::metrics
