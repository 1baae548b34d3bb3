#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "triskelion/tensor.hpp"

namespace triskelion {

// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
  std::size_t id = 0;
};

template <typename T>
class Tape;

// Gradient slots for one backward sweep. Slots are allocated on first
// touch, so a node that never receives gradient reports `reached() == false`.
template <typename T>
class Gradients {
 public:
  explicit Gradients(const Tape<T>& tape);

  bool reached(Var v) const { return slots_.at(v.id).has_value(); }

  // Zero-filled tensor of the node's shape when the node was not reached.
  Tensor<T> of(Var v) const;

  // Mutable slot for accumulation; allocated (zero-filled) on first use.
  Tensor<T>& slot(Var v);

  void release(Var v) { slots_.at(v.id).reset(); }

 private:
  template <typename U>
  friend Gradients<U> backward(const Tape<U>& tape, Var root);

  const Tape<T>* tape_;
  std::vector<std::optional<Tensor<T>>> slots_;
};

// Reverse-mode record. Nodes are appended in creation order and each input
// reference points to an earlier node, so the graph is acyclic by construction.
template <typename T>
class Tape {
 public:
  // Receives the tape (for input values), the gradient flowing into this
  // node, and the sweep state to accumulate input gradients into.
  using BackwardFn = std::function<void(const Tape&, const Tensor<T>&, Gradients<T>&)>;

  Var leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    if (!needs || !grad_enabled_) {
      backward = nullptr;
      inputs.clear();
    }
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), needs && grad_enabled_});
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::vector<Var>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }

  // Kink tracking: non-smooth ops (relu, clamp) fold their branch pattern
  // into a running signature so the gradient checker can exclude
  // perturbations that cross a non-differentiable point.
  bool tracks_kinks() const { return track_kinks_; }
  void set_track_kinks(bool track) { track_kinks_ = track; }
  void fold_kink(std::uint64_t h) {
    kink_signature_ = (kink_signature_ ^ h) * 0x100000001B3ULL + 0x9E3779B97F4A7C15ULL;
  }
  std::uint64_t kink_signature() const { return kink_signature_; }

 private:
  template <typename U>
  friend Gradients<U> backward(const Tape<U>& tape, Var root);

  struct Node {
    Tensor<T> value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool track_kinks_ = false;
  std::uint64_t kink_signature_ = 0xCBF29CE484222325ULL;
};

// Reverse sweep from a scalar root. The tape is left untouched, so several
// sweeps from different roots of one forward pass are allowed.
template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var root);

extern template class Gradients<float>;
extern template class Gradients<double>;
extern template Gradients<float> backward(const Tape<float>&, Var);
extern template Gradients<double> backward(const Tape<double>&, Var);

}  // namespace triskelion
