#include "triskelion/autodiff.hpp"

namespace triskelion {

template <typename T>
Gradients<T>::Gradients(const Tape<T>& tape) : tape_(&tape), slots_(tape.size()) {}

template <typename T>
Tensor<T> Gradients<T>::of(Var v) const {
  const auto& s = slots_.at(v.id);
  if (s) return *s;
  return Tensor<T>(tape_->value(v).shape());
}

template <typename T>
Tensor<T>& Gradients<T>::slot(Var v) {
  auto& s = slots_.at(v.id);
  if (!s) s.emplace(tape_->value(v).shape());
  return *s;
}

template <typename T>
Gradients<T> backward(const Tape<T>& tape, Var root) {
  if (root.id >= tape.size()) fail(ErrorKind::InvalidArgument, "root is not a node of this tape");
  if (tape.value(root).size() != 1) {
    fail(ErrorKind::NonScalarRoot,
         "backward needs a scalar root, got " + shape_string(tape.value(root).shape()));
  }
  Gradients<T> grads(tape);
  if (!tape.requires_grad(root)) return grads;
  grads.slot(root)[0] = T{1};
  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Var v{id};
    if (!grads.reached(v)) continue;
    const auto& node = tape.nodes_[id];
    if (!node.backward) continue;  // leaf: keep its gradient
    node.backward(tape, *grads.slots_[id], grads);
    grads.release(v);
  }
  return grads;
}

template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward(const Tape<float>&, Var);
template Gradients<double> backward(const Tape<double>&, Var);

}  // namespace triskelion
