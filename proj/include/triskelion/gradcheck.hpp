#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "triskelion/autodiff.hpp"
#include "triskelion/tensor.hpp"

// Central-difference verification of backward rules. Graphs are evaluated in
// double precision; the same templated op code runs in float for training.
namespace triskelion::gradcheck {

using GraphFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

struct Options {
  double h = 1e-3;
  // 0 checks every element; otherwise a seeded sample of this many per input.
  std::size_t max_elements_per_input = 0;
  std::uint64_t seed = 0x5EED;
};

struct InputReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // perturbation crossed a non-differentiable point
};

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;
  std::vector<InputReport> inputs;
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

Result grad_check(const GraphFn& fn, const std::vector<Tensor<double>>& inputs, const Options& options = {});

// Scalar sum(v ⊙ weights); used to reduce an op's output to a loss with a
// generic upstream gradient.
Var project(Tape<double>& tape, Var v, const Tensor<double>& weights);

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0);

struct OpCheck {
  std::string name;
  double tolerance;
  std::function<Result()> run;
};

struct SuiteRow {
  std::string name;
  double tolerance;
  Result result;
  bool passed;
};

// Every differentiable op on randomized small shapes under a fixed seed.
std::vector<OpCheck> op_suite();

std::vector<SuiteRow> run_suite(const std::vector<OpCheck>& checks);

}  // namespace triskelion::gradcheck
