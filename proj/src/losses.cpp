#include "triskelion/losses.hpp"

#include <cmath>
#include <string>

#include "triskelion/error.hpp"
#include "triskelion/ops.hpp"

namespace triskelion::losses {

void LossWeights::validate() const {
  for (auto [name, w] : {std::pair{"alpha", alpha}, std::pair{"beta", beta}, std::pair{"gamma", gamma},
                         std::pair{"lambda", lambda_kld}}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorKind::NegativeWeight, std::string(name) + " = " + std::to_string(w) + " must be >= 0");
    }
  }
}

template <typename T>
Var loss_pred(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels) {
  return ops::softmax_cross_entropy(tape, logits, labels);
}

template <typename T>
GenVars loss_gen(Tape<T>& tape, Var x, Var xhat, Var mu, Var logvar, double lambda_kld) {
  const Var recon = ops::mse(tape, xhat, x);
  const Var kld = ops::gaussian_kld(tape, mu, logvar);
  const Var combined = ops::add(tape, recon, ops::scale(tape, kld, static_cast<T>(lambda_kld)));
  return {recon, kld, combined};
}

template <typename T>
Var loss_desc(Tape<T>& tape, Var latents) {
  return ops::latent_variance(tape, latents);
}

template <typename T>
Var loss_tri(Tape<T>& tape, std::optional<Var> pred, std::optional<Var> gen, Var desc, const LossWeights& weights) {
  weights.validate();
  Var total = ops::scale(tape, desc, static_cast<T>(weights.gamma));
  if (gen) total = ops::add(tape, ops::scale(tape, *gen, static_cast<T>(weights.beta)), total);
  if (pred) total = ops::add(tape, ops::scale(tape, *pred, static_cast<T>(weights.alpha)), total);
  return total;
}

template <typename T>
LossBreakdown read_breakdown(const Tape<T>& tape, const TriVars& vars) {
  LossBreakdown b;
  if (vars.pred) b.pred = tape.value(*vars.pred).item();
  if (vars.gen) {
    b.gen_recon = tape.value(vars.gen->recon).item();
    b.gen_kld = tape.value(vars.gen->kld).item();
  }
  b.desc = tape.value(vars.desc).item();
  b.total = tape.value(vars.total).item();
  return b;
}

#define TRISKELION_INSTANTIATE_LOSSES(T)                                                           \
  template Var loss_pred<T>(Tape<T>&, Var, std::span<const std::uint8_t>);                         \
  template GenVars loss_gen<T>(Tape<T>&, Var, Var, Var, Var, double);                              \
  template Var loss_desc<T>(Tape<T>&, Var);                                                        \
  template Var loss_tri<T>(Tape<T>&, std::optional<Var>, std::optional<Var>, Var, const LossWeights&); \
  template LossBreakdown read_breakdown<T>(const Tape<T>&, const TriVars&);

TRISKELION_INSTANTIATE_LOSSES(float)
TRISKELION_INSTANTIATE_LOSSES(double)

}  // namespace triskelion::losses
