#include "triskelion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "triskelion/ops.hpp"
#include "triskelion/rng.hpp"

namespace triskelion::gradcheck {
namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const GraphFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.leaf(in));
  const Var root = fn(tape, vars);
  return {tape.value(root).item(), tape.kink_signature()};
}

std::vector<std::size_t> choose_elements(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= n) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

double relative_error(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

Result grad_check(const GraphFn& fn, const std::vector<Tensor<double>>& inputs, const Options& options) {
  Tape<double> tape;
  tape.set_track_kinks(true);
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in));
  const Var root = fn(tape, vars);
  const std::uint64_t base_signature = tape.kink_signature();
  const auto grads = backward(tape, root);

  Result result;
  Rng rng(options.seed);
  auto work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = grads.of(vars[i]);
    InputReport report;
    for (std::size_t e : choose_elements(inputs[i].size(), options.max_elements_per_input, rng)) {
      const double original = work[i][e];
      work[i][e] = original + options.h;
      const Evaluation plus = evaluate(fn, work);
      work[i][e] = original - options.h;
      const Evaluation minus = evaluate(fn, work);
      work[i][e] = original;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.h);
      const double err = relative_error(analytic[e], numeric);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = e;
      }
    }
    result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
    result.checked += report.checked;
    result.excluded += report.excluded;
    result.inputs.push_back(report);
  }
  return result;
}

Var project(Tape<double>& tape, Var v, const Tensor<double>& weights) {
  const auto& x = tape.value(v);
  if (x.shape() != weights.shape()) fail(ErrorKind::ShapeMismatch, "project: weight shape differs from input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * weights[i];
  return tape.record(Tensor<double>::scalar(acc), {v},
                     [v, weights](const Tape<double>&, const Tensor<double>& g, Gradients<double>& grads) {
                       auto& slot = grads.slot(v);
                       for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[0] * weights[i];
                     });
}

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double scale) {
  Tensor<double> t(shape);
  Rng rng(seed);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

namespace {

using ops::Conv2dGeometry;

// An op check reduces the op output through a random projection so every
// output element carries an independent upstream gradient.
OpCheck projected(std::string name, double tolerance, std::vector<Tensor<double>> inputs, Shape out_shape,
                  std::function<Var(Tape<double>&, std::span<const Var>)> op) {
  auto weights = random_tensor(out_shape, 0xAB1E + out_shape.size());
  return OpCheck{std::move(name), tolerance, [inputs = std::move(inputs), weights, op]() {
                   return grad_check(
                       [&](Tape<double>& t, std::span<const Var> v) { return project(t, op(t, v), weights); },
                       inputs);
                 }};
}

}  // namespace

std::vector<OpCheck> op_suite() {
  std::vector<OpCheck> suite;

  suite.push_back(projected("conv2d", 1e-4,
                            {random_tensor({2, 3, 6, 6}, 1), random_tensor({4, 3, 3, 3}, 2, 0.5),
                             random_tensor({4}, 3)},
                            {2, 4, 3, 3}, [](Tape<double>& t, std::span<const Var> v) {
                              return ops::conv2d(t, v[0], v[1], v[2], Conv2dGeometry{2, 1, 0});
                            }));
  suite.push_back(projected("conv2d_stride1", 1e-4,
                            {random_tensor({2, 2, 5, 5}, 4), random_tensor({3, 2, 3, 3}, 5, 0.5),
                             random_tensor({3}, 6)},
                            {2, 3, 5, 5}, [](Tape<double>& t, std::span<const Var> v) {
                              return ops::conv2d(t, v[0], v[1], v[2], Conv2dGeometry{1, 1, 0});
                            }));
  suite.push_back(projected("conv_transpose2d", 1e-4,
                            {random_tensor({2, 3, 3, 3}, 7), random_tensor({3, 2, 4, 4}, 8, 0.5),
                             random_tensor({2}, 9)},
                            {2, 2, 6, 6}, [](Tape<double>& t, std::span<const Var> v) {
                              return ops::conv_transpose2d(t, v[0], v[1], v[2], Conv2dGeometry{2, 1, 0});
                            }));
  suite.push_back(projected("conv_transpose2d_k3", 1e-4,
                            {random_tensor({2, 3, 3, 3}, 10), random_tensor({3, 2, 3, 3}, 11, 0.5),
                             random_tensor({2}, 12)},
                            {2, 2, 5, 5}, [](Tape<double>& t, std::span<const Var> v) {
                              return ops::conv_transpose2d(t, v[0], v[1], v[2], Conv2dGeometry{2, 1, 0});
                            }));
  suite.push_back(projected("linear", 1e-4,
                            {random_tensor({3, 5}, 13), random_tensor({4, 5}, 14), random_tensor({4}, 15)}, {3, 4},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::linear(t, v[0], v[1], v[2]); }));
  suite.push_back(projected("batchnorm2d", 1e-3,
                            {random_tensor({4, 3, 3, 3}, 16), random_tensor({3}, 17), random_tensor({3}, 18)},
                            {4, 3, 3, 3}, [](Tape<double>& t, std::span<const Var> v) {
                              Tensor<double> mean({3}, 0.0), var({3}, 1.0);
                              return ops::batchnorm2d(t, v[0], v[1], v[2], mean, var,
                                                      ops::BatchNormOptions{ops::Mode::Train, 0.1, 1e-5});
                            }));
  suite.push_back(projected("batchnorm2d_eval", 1e-4,
                            {random_tensor({2, 3, 2, 2}, 19), random_tensor({3}, 20), random_tensor({3}, 21)},
                            {2, 3, 2, 2}, [](Tape<double>& t, std::span<const Var> v) {
                              Tensor<double> mean({3}, std::vector<double>{0.1, -0.2, 0.3});
                              Tensor<double> var({3}, std::vector<double>{0.5, 1.5, 2.0});
                              return ops::batchnorm2d(t, v[0], v[1], v[2], mean, var,
                                                      ops::BatchNormOptions{ops::Mode::Eval, 0.1, 1e-5});
                            }));
  suite.push_back(projected("relu", 1e-4, {random_tensor({4, 6}, 22)}, {4, 6},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::relu(t, v[0]); }));
  suite.push_back(projected("sigmoid", 1e-4, {random_tensor({4, 6}, 23, 2.0)}, {4, 6},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::sigmoid(t, v[0]); }));
  suite.push_back(projected("dropout", 1e-4, {random_tensor({4, 6}, 24)}, {4, 6},
                            [](Tape<double>& t, std::span<const Var> v) {
                              Rng rng(99);
                              return ops::dropout(t, v[0], 0.2, rng, ops::Mode::Train);
                            }));
  suite.push_back(projected("clamp", 1e-4, {random_tensor({4, 6}, 25, 2.0)}, {4, 6},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::clamp(t, v[0], -1.0, 1.5); }));
  suite.push_back(projected("slice_columns", 1e-4, {random_tensor({3, 8}, 26)}, {3, 3},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::slice_columns(t, v[0], 2, 3); }));
  suite.push_back(projected("reshape", 1e-4, {random_tensor({2, 6}, 27)}, {3, 4},
                            [](Tape<double>& t, std::span<const Var> v) { return ops::reshape(t, v[0], {3, 4}); }));
  suite.push_back(projected("add_scale", 1e-4, {random_tensor({3, 4}, 28), random_tensor({3, 4}, 29)}, {3, 4},
                            [](Tape<double>& t, std::span<const Var> v) {
                              return ops::add(t, ops::scale(t, v[0], 0.7), v[1]);
                            }));
  suite.push_back(projected("reparameterize", 1e-4,
                            {random_tensor({3, 4}, 30), random_tensor({3, 4}, 31, 0.5)}, {3, 4},
                            [](Tape<double>& t, std::span<const Var> v) {
                              return ops::reparameterize(t, v[0], v[1], random_tensor({3, 4}, 32));
                            }));

  const std::vector<std::uint8_t> labels{3, 0, 9, 4};
  suite.push_back(OpCheck{"softmax_cross_entropy", 1e-4, [labels]() {
                            return grad_check(
                                [&](Tape<double>& t, std::span<const Var> v) {
                                  return ops::softmax_cross_entropy(t, v[0], labels);
                                },
                                {random_tensor({4, 10}, 33, 2.0)});
                          }});
  suite.push_back(OpCheck{"mse", 1e-4, []() {
                            return grad_check(
                                [](Tape<double>& t, std::span<const Var> v) { return ops::mse(t, v[0], v[1]); },
                                {random_tensor({3, 5}, 34), random_tensor({3, 5}, 35)});
                          }});
  suite.push_back(OpCheck{"gaussian_kld", 1e-4, []() {
                            return grad_check(
                                [](Tape<double>& t, std::span<const Var> v) {
                                  return ops::gaussian_kld(t, v[0], v[1]);
                                },
                                {random_tensor({3, 4}, 36), random_tensor({3, 4}, 37, 0.5)});
                          }});
  suite.push_back(OpCheck{"latent_variance", 1e-4, []() {
                            return grad_check(
                                [](Tape<double>& t, std::span<const Var> v) { return ops::latent_variance(t, v[0]); },
                                {random_tensor({5, 4}, 38)});
                          }});
  suite.push_back(OpCheck{"sum", 1e-4, []() {
                            return grad_check(
                                [](Tape<double>& t, std::span<const Var> v) { return ops::sum(t, v[0]); },
                                {random_tensor({2, 3}, 39)});
                          }});
  return suite;
}

std::vector<SuiteRow> run_suite(const std::vector<OpCheck>& checks) {
  std::vector<SuiteRow> rows;
  rows.reserve(checks.size());
  for (const auto& check : checks) {
    Result r = check.run();
    const bool passed = r.checked > 0 && r.max_rel_error < check.tolerance;
    rows.push_back(SuiteRow{check.name, check.tolerance, std::move(r), passed});
  }
  return rows;
}

}  // namespace triskelion::gradcheck
