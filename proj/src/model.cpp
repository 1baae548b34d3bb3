#include "triskelion/model.hpp"

#include <cmath>

#include "triskelion/error.hpp"

namespace triskelion::model {
namespace {

using ops::Conv2dGeometry;
using ops::Mode;

constexpr Conv2dGeometry kDown{2, 1, 0};

std::vector<ParamSpec> build_architecture() {
  std::vector<ParamSpec> a;
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    a.push_back({name + ".weight", {cout, cin, k, k}, Init::HeNormal, cin * k * k, Group::Encoder});
    a.push_back({name + ".bias", {cout}, Init::Zero, 0, Group::Encoder});
  };
  auto bn = [&](const std::string& name, std::size_t c) {
    a.push_back({name + ".gamma", {c}, Init::One, 0, Group::Encoder});
    a.push_back({name + ".beta", {c}, Init::Zero, 0, Group::Encoder});
  };
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out, Group g) {
    a.push_back({name + ".weight", {out, in}, Init::HeNormal, in, g});
    a.push_back({name + ".bias", {out}, Init::Zero, 0, g});
  };
  // Transposed-conv weights are Cin×Cout×k×k; fan-in follows the
  // Cout·k·k convention of the common frameworks.
  auto deconv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
    a.push_back({name + ".weight", {cin, cout, k, k}, Init::HeNormal, cout * k * k, Group::Decoder});
    a.push_back({name + ".bias", {cout}, Init::Zero, 0, Group::Decoder});
  };

  conv("enc.conv1", 1, 32, 3);
  bn("enc.bn1", 32);
  conv("enc.conv2", 32, 64, 3);
  bn("enc.bn2", 64);
  conv("enc.conv3", 64, 128, 3);
  bn("enc.bn3", 128);
  dense("enc.fc", 128 * 4 * 4, 2 * kLatentDim, Group::Encoder);
  dense("cls.fc1", kLatentDim, kClassifierHidden, Group::Classifier);
  dense("cls.fc2", kClassifierHidden, kClasses, Group::Classifier);
  dense("dec.fc", kLatentDim, 128 * 4 * 4, Group::Decoder);
  deconv("dec.deconv1", 128, 64, 3);
  deconv("dec.deconv2", 64, 32, 4);
  deconv("dec.deconv3", 32, 1, 4);
  return a;
}

std::vector<ParamSpec> build_buffers() {
  std::vector<ParamSpec> b;
  for (auto [name, c] : {std::pair{"enc.bn1", 32}, std::pair{"enc.bn2", 64}, std::pair{"enc.bn3", 128}}) {
    const auto channels = static_cast<std::size_t>(c);
    b.push_back({std::string(name) + ".running_mean", {channels}, Init::Zero, 0, Group::Encoder});
    b.push_back({std::string(name) + ".running_var", {channels}, Init::One, 0, Group::Encoder});
  }
  return b;
}

Tensor<float> materialize(const ParamSpec& spec, Rng& rng) {
  Tensor<float> t(spec.shape);
  switch (spec.init) {
    case Init::Zero:
      break;
    case Init::One:
      t.fill(1.0f);
      break;
    case Init::HeNormal: {
      const double std = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
      for (auto& v : t.values()) v = static_cast<float>(std * rng.normal());
      break;
    }
  }
  return t;
}

template <typename T>
Var conv_bn_relu(Tape<T>& tape, const Bound& p, std::map<std::string, Tensor<T>>& buffers, Var x,
                 const std::string& conv, const std::string& bn, Mode mode) {
  Var h = ops::conv2d(tape, x, p.at(conv + ".weight"), p.at(conv + ".bias"), kDown);
  h = ops::batchnorm2d(tape, h, p.at(bn + ".gamma"), p.at(bn + ".beta"), buffers.at(bn + ".running_mean"),
                       buffers.at(bn + ".running_var"), ops::BatchNormOptions{mode, 0.1, 1e-5});
  return ops::relu(tape, h);
}

}  // namespace

const std::vector<ParamSpec>& architecture() {
  static const std::vector<ParamSpec> specs = build_architecture();
  return specs;
}

const std::vector<ParamSpec>& buffer_specs() {
  static const std::vector<ParamSpec> specs = build_buffers();
  return specs;
}

Group group_of(const std::string& name) {
  if (name.starts_with("enc.")) return Group::Encoder;
  if (name.starts_with("cls.")) return Group::Classifier;
  if (name.starts_with("dec.")) return Group::Decoder;
  fail(ErrorKind::NameMismatch, "parameter " + name + " belongs to no group");
}

ModelParams init_params(std::uint64_t seed) {
  Rng rng(seed);
  ModelParams params;
  for (const auto& spec : architecture()) params.weights.emplace(spec.name, materialize(spec, rng));
  for (const auto& spec : buffer_specs()) params.buffers.emplace(spec.name, materialize(spec, rng));
  return params;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params.weights) n += t.size();
  return n;
}

void validate(const ModelParams& params) {
  auto check = [](const std::map<std::string, Tensor<float>>& got, const std::vector<ParamSpec>& want,
                  const char* what) {
    if (got.size() != want.size()) {
      fail(ErrorKind::ShapeMismatch, std::string(what) + ": expected " + std::to_string(want.size()) +
                                         " tensors, found " + std::to_string(got.size()));
    }
    for (const auto& spec : want) {
      const auto it = got.find(spec.name);
      if (it == got.end()) fail(ErrorKind::ShapeMismatch, std::string(what) + ": missing " + spec.name);
      if (it->second.shape() != spec.shape) {
        fail(ErrorKind::ShapeMismatch, spec.name + " has shape " + shape_string(it->second.shape()) +
                                           ", architecture needs " + shape_string(spec.shape));
      }
    }
  };
  check(params.weights, architecture(), "weights");
  check(params.buffers, buffer_specs(), "buffers");
}

template <typename T>
Bound bind(Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
  Bound bound;
  for (const auto& [name, value] : params.weights) bound.emplace(name, tape.leaf(value, requires_grad));
  return bound;
}

template <typename T>
std::pair<Var, Var> encode(Tape<T>& tape, const Bound& p, std::map<std::string, Tensor<T>>& buffers, Var x,
                           Mode mode) {
  const auto& xs = tape.value(x).shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != 28 || xs[3] != 28) {
    fail(ErrorKind::ShapeMismatch, "encoder expects B×1×28×28, got " + shape_string(xs));
  }
  const std::size_t batch = xs[0];
  Var h = conv_bn_relu(tape, p, buffers, x, "enc.conv1", "enc.bn1", mode);
  h = conv_bn_relu(tape, p, buffers, h, "enc.conv2", "enc.bn2", mode);
  h = conv_bn_relu(tape, p, buffers, h, "enc.conv3", "enc.bn3", mode);
  h = ops::reshape(tape, h, {batch, 128 * 4 * 4});
  const Var stats = ops::linear(tape, h, p.at("enc.fc.weight"), p.at("enc.fc.bias"));
  const Var mu = ops::slice_columns(tape, stats, 0, kLatentDim);
  Var logvar = ops::slice_columns(tape, stats, kLatentDim, kLatentDim);
  logvar = ops::clamp(tape, logvar, static_cast<T>(kLogvarMin), static_cast<T>(kLogvarMax));
  return {mu, logvar};
}

template <typename T>
LatentVars<T> reparameterize(Tape<T>& tape, Var mu, Var logvar, Rng& rng, Mode mode) {
  Tensor<T> eps(tape.value(mu).shape());
  if (mode == Mode::Eval) return {mu, logvar, mu, std::move(eps)};
  for (auto& v : eps.values()) v = static_cast<T>(rng.normal());
  const Var z = ops::reparameterize(tape, mu, logvar, eps);
  return {mu, logvar, z, std::move(eps)};
}

template <typename T>
Var classify(Tape<T>& tape, const Bound& p, Var z, Rng& rng, Mode mode) {
  const auto& zs = tape.value(z).shape();
  if (zs.size() != 2 || zs[1] != kLatentDim) {
    fail(ErrorKind::ShapeMismatch, "classifier expects B×32, got " + shape_string(zs));
  }
  Var h = ops::linear(tape, z, p.at("cls.fc1.weight"), p.at("cls.fc1.bias"));
  h = ops::relu(tape, h);
  h = ops::dropout(tape, h, kDropout, rng, mode);
  return ops::linear(tape, h, p.at("cls.fc2.weight"), p.at("cls.fc2.bias"));
}

template <typename T>
Var decode(Tape<T>& tape, const Bound& p, Var z) {
  const auto& zs = tape.value(z).shape();
  if (zs.size() != 2 || zs[1] != kLatentDim) {
    fail(ErrorKind::ShapeMismatch, "decoder expects B×32, got " + shape_string(zs));
  }
  const std::size_t batch = zs[0];
  Var h = ops::linear(tape, z, p.at("dec.fc.weight"), p.at("dec.fc.bias"));
  h = ops::reshape(tape, h, {batch, 128, 4, 4});
  h = ops::conv_transpose2d(tape, h, p.at("dec.deconv1.weight"), p.at("dec.deconv1.bias"), kDown);
  h = ops::relu(tape, h);
  h = ops::conv_transpose2d(tape, h, p.at("dec.deconv2.weight"), p.at("dec.deconv2.bias"), kDown);
  h = ops::relu(tape, h);
  h = ops::conv_transpose2d(tape, h, p.at("dec.deconv3.weight"), p.at("dec.deconv3.bias"), kDown);
  return ops::sigmoid(tape, h);
}

template <typename T>
ForwardVars<T> forward(Tape<T>& tape, const Bound& p, std::map<std::string, Tensor<T>>& buffers, Var x, Rng& rng,
                       ForwardOptions options) {
  const auto [mu, logvar] = encode(tape, p, buffers, x, options.mode);
  ForwardVars<T> out{reparameterize(tape, mu, logvar, rng, options.mode), std::nullopt, std::nullopt};
  if (options.classify) {
    const Var head_input = options.mode == Mode::Train ? out.latent.z : out.latent.mu;
    out.logits = classify(tape, p, head_input, rng, options.mode);
  }
  if (options.decode) out.xhat = decode(tape, p, out.latent.z);
  return out;
}

Inference infer(const ModelParams& params, const Tensor<float>& x, bool with_logits, bool with_xhat) {
  Tape<float> tape;
  tape.set_grad_enabled(false);
  const Bound p = bind(tape, params, false);
  auto buffers = params.buffers;
  Rng unused(0);
  const Var xv = tape.leaf(x, false);
  const auto fw = forward(tape, p, buffers, xv, unused, ForwardOptions{Mode::Eval, with_logits, with_xhat});
  Inference out{tape.value(fw.latent.mu), tape.value(fw.latent.logvar), std::nullopt, std::nullopt};
  if (fw.logits) out.logits = tape.value(*fw.logits);
  if (fw.xhat) out.xhat = tape.value(*fw.xhat);
  return out;
}

#define TRISKELION_INSTANTIATE_MODEL(T)                                                                   \
  template Bound bind<T>(Tape<T>&, const ParamSet<T>&, bool);                                             \
  template std::pair<Var, Var> encode<T>(Tape<T>&, const Bound&, std::map<std::string, Tensor<T>>&, Var,  \
                                         Mode);                                                           \
  template LatentVars<T> reparameterize<T>(Tape<T>&, Var, Var, Rng&, Mode);                               \
  template Var classify<T>(Tape<T>&, const Bound&, Var, Rng&, Mode);                                      \
  template Var decode<T>(Tape<T>&, const Bound&, Var);                                                    \
  template ForwardVars<T> forward<T>(Tape<T>&, const Bound&, std::map<std::string, Tensor<T>>&, Var, Rng&, \
                                     ForwardOptions);

TRISKELION_INSTANTIATE_MODEL(float)
TRISKELION_INSTANTIATE_MODEL(double)

}  // namespace triskelion::model
