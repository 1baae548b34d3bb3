#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "triskelion/autodiff.hpp"

namespace triskelion::losses {

struct LossWeights {
  double alpha = 0.5;  // predictive
  double beta = 0.4;   // generative
  double gamma = 0.1;  // descriptive
  double lambda_kld = 0.001;

  // NegativeWeight if any coefficient is negative or not finite.
  void validate() const;
};

struct LossBreakdown {
  double pred = 0.0;
  double gen_recon = 0.0;
  double gen_kld = 0.0;
  double desc = 0.0;
  double total = 0.0;
};

// Cross-entropy of softmax(logits) against integer labels, mean over batch.
template <typename T>
Var loss_pred(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels);

struct GenVars {
  Var recon;
  Var kld;
  Var combined;  // recon + lambda * kld
};

template <typename T>
GenVars loss_gen(Tape<T>& tape, Var x, Var xhat, Var mu, Var logvar, double lambda_kld);

// Mean squared distance of each latent row to the batch-mean row.
template <typename T>
Var loss_desc(Tape<T>& tape, Var latents);

// Weighted composition as one differentiable node. An absent branch
// contributes nothing.
template <typename T>
Var loss_tri(Tape<T>& tape, std::optional<Var> pred, std::optional<Var> gen, Var desc, const LossWeights& weights);

struct TriVars {
  std::optional<Var> pred;
  std::optional<GenVars> gen;
  Var desc;
  Var total;
};

template <typename T>
LossBreakdown read_breakdown(const Tape<T>& tape, const TriVars& vars);

}  // namespace triskelion::losses
