#include "triskelion/optim.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "triskelion/error.hpp"
#include "triskelion/metrics.hpp"

namespace triskelion::optim {
namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    fail(ErrorKind::InvalidArgument, "bad number for " + key + ": '" + text + "'");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    fail(ErrorKind::InvalidArgument, "bad integer for " + key + ": '" + text + "'");
  }
  return v;
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Unified: return "unified";
    case TrainMode::PredictiveOnly: return "predictive_only";
    case TrainMode::GenerativeOnly: return "generative_only";
  }
  return "unified";
}

TrainMode parse_mode(const std::string& text) {
  if (text == "unified") return TrainMode::Unified;
  if (text == "predictive_only") return TrainMode::PredictiveOnly;
  if (text == "generative_only") return TrainMode::GenerativeOnly;
  fail(ErrorKind::InvalidArgument, "unknown mode '" + text + "'");
}

losses::LossWeights effective_weights(TrainMode mode, const losses::LossWeights& configured) {
  losses::LossWeights w = configured;
  switch (mode) {
    case TrainMode::Unified:
      break;
    case TrainMode::PredictiveOnly:
      w.alpha = 1.0, w.beta = 0.0, w.gamma = 0.0;
      break;
    case TrainMode::GenerativeOnly:
      w.alpha = 0.0, w.beta = 1.0, w.gamma = 0.0;
      break;
  }
  return w;
}

void TrainConfig::validate() const {
  weights.validate();
  if (epochs < 1) fail(ErrorKind::InvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch size must be >= 1");
  if (!(lr > 0.0)) fail(ErrorKind::InvalidArgument, "learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorKind::InvalidArgument, "Adam betas must lie in [0,1)");
  }
}

TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "none" || name == "paper") return c;
  if (name == "desk") {
    c.subset = 10000;
    c.epochs = 5;
    return c;
  }
  fail(ErrorKind::InvalidArgument, "unknown preset '" + name + "'");
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  return {
      {"mode", to_string(c.mode)},
      {"alpha", format_double(c.weights.alpha)},
      {"beta", format_double(c.weights.beta)},
      {"gamma", format_double(c.weights.gamma)},
      {"lambda", format_double(c.weights.lambda_kld)},
      {"epochs", std::to_string(c.epochs)},
      {"batch_size", std::to_string(c.batch_size)},
      {"lr", format_double(c.lr)},
      {"beta1", format_double(c.beta1)},
      {"beta2", format_double(c.beta2)},
      {"eps_adam", format_double(c.eps_adam)},
      {"seed", std::to_string(c.seed)},
      {"subset", std::to_string(c.subset)},
      {"preset", c.preset},
      {"train_images", c.train_images},
      {"train_labels", c.train_labels},
      {"test_images", c.test_images},
      {"test_labels", c.test_labels},
  };
}

TrainConfig from_key_values(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("mode")) c.mode = parse_mode(*v);
  if (auto v = get("alpha")) c.weights.alpha = parse_double("alpha", *v);
  if (auto v = get("beta")) c.weights.beta = parse_double("beta", *v);
  if (auto v = get("gamma")) c.weights.gamma = parse_double("gamma", *v);
  if (auto v = get("lambda")) c.weights.lambda_kld = parse_double("lambda", *v);
  if (auto v = get("epochs")) c.epochs = parse_uint("epochs", *v);
  if (auto v = get("batch_size")) c.batch_size = parse_uint("batch_size", *v);
  if (auto v = get("lr")) c.lr = parse_double("lr", *v);
  if (auto v = get("beta1")) c.beta1 = parse_double("beta1", *v);
  if (auto v = get("beta2")) c.beta2 = parse_double("beta2", *v);
  if (auto v = get("eps_adam")) c.eps_adam = parse_double("eps_adam", *v);
  if (auto v = get("seed")) c.seed = parse_uint("seed", *v);
  if (auto v = get("subset")) c.subset = parse_uint("subset", *v);
  if (auto v = get("preset")) c.preset = *v;
  if (auto v = get("train_images")) c.train_images = *v;
  if (auto v = get("train_labels")) c.train_labels = *v;
  if (auto v = get("test_images")) c.test_images = *v;
  if (auto v = get("test_labels")) c.test_labels = *v;
  return c;
}

AdamState AdamState::zeros_like(const std::map<std::string, Tensor<float>>& params) {
  AdamState s;
  for (const auto& [name, p] : params) {
    s.m.emplace(name, Tensor<float>(p.shape()));
    s.v.emplace(name, Tensor<float>(p.shape()));
  }
  return s;
}

void adam_step(std::map<std::string, Tensor<float>>& params, const std::map<std::string, Tensor<float>>& grads,
               AdamState& state, const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::NameMismatch, "gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) fail(ErrorKind::NameMismatch, "gradient shape differs for " + name);
    if (!g.all_finite()) fail(ErrorKind::NonFiniteGradient, "non-finite gradient for " + name);
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [mit, fresh_m] = state.m.try_emplace(name, g.shape());
    auto [vit, fresh_v] = state.v.try_emplace(name, g.shape());
    (void)fresh_m;
    (void)fresh_v;
    auto& m = mit->second;
    auto& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      // moments stored in float, updated in double
      const double gi = g[i];
      m[i] = static_cast<float>(hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi);
      v[i] = static_cast<float>(hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi);
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] = static_cast<float>(p[i] - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
    }
  }
}

template <typename T>
std::unique_ptr<StepGraph<T>> build_step(const model::ParamSet<T>& params, std::map<std::string, Tensor<T>>& buffers,
                                         const data::Batch& batch, TrainMode mode,
                                         const losses::LossWeights& configured, Rng& rng, ops::Mode net_mode) {
  auto g = std::make_unique<StepGraph<T>>();
  g->weights = effective_weights(mode, configured);
  g->params = model::bind(g->tape, params);
  g->x = g->tape.leaf(batch.pixels.template cast<T>(), false);
  model::ForwardOptions fo{net_mode, mode != TrainMode::GenerativeOnly, mode != TrainMode::PredictiveOnly};
  g->forward = model::forward(g->tape, g->params, buffers, g->x, rng, fo);

  auto& tape = g->tape;
  const auto& lat = g->forward.latent;
  if (g->forward.logits) g->loss.pred = losses::loss_pred(tape, *g->forward.logits, batch.labels);
  if (g->forward.xhat) {
    g->loss.gen = losses::loss_gen(tape, g->x, *g->forward.xhat, lat.mu, lat.logvar, g->weights.lambda_kld);
  }
  g->loss.desc = losses::loss_desc(tape, lat.mu);
  g->loss.total = losses::loss_tri(tape, g->loss.pred,
                                   g->loss.gen ? std::optional<Var>(g->loss.gen->combined) : std::nullopt,
                                   g->loss.desc, g->weights);
  return g;
}

template <typename T>
std::map<std::string, Tensor<T>> parameter_gradients(const StepGraph<T>& graph, Var root) {
  const auto grads = backward(graph.tape, root);
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, var] : graph.params) {
    if (grads.reached(var)) out.emplace(name, grads.of(var));
  }
  return out;
}

template std::unique_ptr<StepGraph<float>> build_step(const model::ParamSet<float>&,
                                                      std::map<std::string, Tensor<float>>&, const data::Batch&,
                                                      TrainMode, const losses::LossWeights&, Rng&, ops::Mode);
template std::unique_ptr<StepGraph<double>> build_step(const model::ParamSet<double>&,
                                                       std::map<std::string, Tensor<double>>&, const data::Batch&,
                                                       TrainMode, const losses::LossWeights&, Rng&, ops::Mode);
template std::map<std::string, Tensor<float>> parameter_gradients(const StepGraph<float>&, Var);
template std::map<std::string, Tensor<double>> parameter_gradients(const StepGraph<double>&, Var);

std::uint64_t step_seed(std::uint64_t seed, std::size_t epoch, std::size_t batch) {
  return mix_seed(mix_seed(seed ^ 0xD1B54A32D192ED03ULL, epoch), batch);
}

TrainState initial_state(const TrainConfig& config) {
  TrainState s;
  s.params = model::init_params(config.seed);
  s.adam = AdamState::zeros_like(s.params.weights);
  return s;
}

RunReport train(const TrainConfig& config, const data::RawDataset& full_train, TrainState& state,
                const EpochCallback& on_epoch) {
  config.validate();
  const data::RawDataset subset = config.subset > 0 ? data::take_prefix(full_train, config.subset) : data::RawDataset{};
  const data::RawDataset& train_set = config.subset > 0 ? subset : full_train;
  if (train_set.size() == 0) fail(ErrorKind::EmptyDataset, "training set is empty");

  const AdamHyper hyper{config.lr, config.beta1, config.beta2, config.eps_adam};
  RunReport report;
  for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto plan = data::batch_plan(train_set.size(), config.batch_size, config.seed, epoch);
    losses::LossBreakdown sums;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const data::Batch batch = data::make_batch(train_set, plan[b]);
      Rng rng(step_seed(config.seed, epoch, b));
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b);
      std::unique_ptr<StepGraph<float>> graph;
      try {
        graph = build_step(state.params, state.params.buffers, batch, config.mode, config.weights, rng);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteValue) throw;
        fail(ErrorKind::NonFiniteLoss, "non-finite loss at " + where + " (" + e.what() + ")");
      }
      const auto br = losses::read_breakdown(graph->tape, graph->loss);
      if (!std::isfinite(br.total)) fail(ErrorKind::NonFiniteLoss, "non-finite loss at " + where);
      if (!report.initial_batch_total) report.initial_batch_total = br.total;
      const auto grads = parameter_gradients(*graph, graph->loss.total);
      adam_step(state.params.weights, grads, state.adam, hyper);

      const auto n = static_cast<double>(batch.labels.size());
      sums.pred += n * br.pred;
      sums.gen_recon += n * br.gen_recon;
      sums.gen_kld += n * br.gen_kld;
      sums.desc += n * br.desc;
      sums.total += n * br.total;
      seen += batch.labels.size();
    }
    const auto denom = static_cast<double>(seen);
    EpochLog log;
    log.epoch = epoch;
    log.losses = {sums.pred / denom, sums.gen_recon / denom, sums.gen_kld / denom, sums.desc / denom,
                  sums.total / denom};
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.epochs_done = epoch + 1;
    report.epochs.push_back(log);
    if (on_epoch) on_epoch(log, state);
  }
  return report;
}

EvalResult evaluate(const model::ModelParams& params, const data::RawDataset& test_set, std::size_t chunk) {
  const std::size_t n = test_set.size();
  if (n == 0) fail(ErrorKind::EmptyDataset, "test set is empty");
  EvalResult result;
  result.mu = Tensor<float>({n, model::kLatentDim});
  result.logits = Tensor<float>({n, model::kClasses});
  double sq_err = 0.0;
  std::size_t pixels = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const data::Batch batch = data::make_batch(test_set, idx);
    const auto inf = model::infer(params, batch.pixels);
    std::copy(inf.mu.values().begin(), inf.mu.values().end(), result.mu.data() + start * model::kLatentDim);
    std::copy(inf.logits->values().begin(), inf.logits->values().end(),
              result.logits.data() + start * model::kClasses);
    const auto& xhat = *inf.xhat;
    for (std::size_t i = 0; i < xhat.size(); ++i) {
      const double d = static_cast<double>(xhat[i]) - batch.pixels[i];
      sq_err += d * d;
    }
    pixels += xhat.size();
  }
  result.accuracy = metrics::accuracy(result.logits, test_set.labels);
  result.recon_mse = sq_err / static_cast<double>(pixels);
  return result;
}

TrainOutcome train(const TrainConfig& config, const data::RawDataset& train_set, const data::RawDataset* test_set,
                   const EpochCallback& on_epoch) {
  TrainOutcome out{{}, initial_state(config)};
  out.report = train(config, train_set, out.state, on_epoch);
  if (test_set) {
    const auto ev = evaluate(out.state.params, *test_set);
    out.report.test = TestMetrics{ev.accuracy, ev.recon_mse, metrics::latent_ari(ev.mu, test_set->labels, config.seed)};
  }
  return out;
}

}  // namespace triskelion::optim
