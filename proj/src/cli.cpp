#include "triskelion/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>

#include "triskelion/data.hpp"
#include "triskelion/error.hpp"
#include "triskelion/metrics.hpp"
#include "triskelion/model.hpp"
#include "triskelion/optim.hpp"
#include "triskelion/persistence.hpp"

namespace triskelion::cli {
namespace fs = std::filesystem;
namespace {

// Flag values as given; unset ones fall back to the preset, then defaults.
struct Flags {
  std::optional<std::string> mode;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, beta, gamma, lambda;
  std::optional<std::string> preset;
  std::optional<std::string> images, labels, test_images, test_labels;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::string kind;
  std::optional<std::size_t> n;
};

// Runtime failures carry the stage they happened in.
struct StageError {
  std::string stage;
  std::string message;
};

template <typename F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw StageError{name, e.what()};
  } catch (const std::exception& e) {
    throw StageError{name, e.what()};
  }
}

void add_config_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--mode", f.mode, "unified | predictive_only | generative_only")
      ->check(CLI::IsMember({"unified", "predictive_only", "generative_only"}));
  cmd->add_option("--epochs", f.epochs, "Training epochs")->check(CLI::PositiveNumber);
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "Root seed");
  cmd->add_option("--alpha", f.alpha, "Predictive weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--beta", f.beta, "Generative weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--gamma", f.gamma, "Descriptive weight")->check(CLI::NonNegativeNumber);
  cmd->add_option("--lambda", f.lambda, "KL weight inside the generative loss")->check(CLI::NonNegativeNumber);
  cmd->add_option("--preset", f.preset, "desk (10k subset, 5 epochs) | paper | none")
      ->check(CLI::IsMember({"desk", "paper", "none"}));
}

void add_train_data_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--images", f.images, "Training images (IDX)");
  cmd->add_option("--labels", f.labels, "Training labels (IDX)");
}

void add_test_data_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--test-images", f.test_images, "Test images (IDX)");
  cmd->add_option("--test-labels", f.test_labels, "Test labels (IDX)");
}

optim::TrainConfig resolve_config(const Flags& f, optim::TrainConfig base) {
  if (f.preset) {
    const auto p = optim::preset_config(*f.preset);
    base.preset = p.preset;
    base.subset = p.subset;
    base.epochs = p.epochs;
  }
  if (f.mode) base.mode = optim::parse_mode(*f.mode);
  if (f.epochs) base.epochs = *f.epochs;
  if (f.batch_size) base.batch_size = *f.batch_size;
  if (f.lr) base.lr = *f.lr;
  if (f.seed) base.seed = *f.seed;
  if (f.alpha) base.weights.alpha = *f.alpha;
  if (f.beta) base.weights.beta = *f.beta;
  if (f.gamma) base.weights.gamma = *f.gamma;
  if (f.lambda) base.weights.lambda_kld = *f.lambda;
  if (f.images) base.train_images = *f.images;
  if (f.labels) base.train_labels = *f.labels;
  if (f.test_images) base.test_images = *f.test_images;
  if (f.test_labels) base.test_labels = *f.test_labels;
  return base;
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  persistence::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string metrics_row(const optim::TrainMode mode, double accuracy, double recon_mse, double ari) {
  const bool has_acc = mode != optim::TrainMode::GenerativeOnly;
  const bool has_recon = mode != optim::TrainMode::PredictiveOnly;
  return (has_acc ? num(accuracy) : "") + "," + (has_recon ? num(recon_mse) : "") + "," + num(ari) + "\n";
}

const char* kMetricsHeader = "accuracy,recon_mse,latent_ari\n";

data::RawDataset load_test(const optim::TrainConfig& c) {
  if (c.test_images.empty() || c.test_labels.empty()) {
    fail(ErrorKind::InvalidArgument, "test data paths not given (--test-images/--test-labels)");
  }
  return data::load_dataset(c.test_images, c.test_labels);
}

int cmd_train(const Flags& f, std::ostream& out) {
  optim::TrainConfig config;
  optim::TrainState state;
  if (f.checkpoint) {
    auto ck = stage("load-checkpoint", [&] { return persistence::load(*f.checkpoint); });
    config = stage("config", [&] { return resolve_config(f, ck.config); });
    state = std::move(ck.state);
  } else {
    config = stage("config", [&] { return resolve_config(f, optim::preset_config(f.preset.value_or("none"))); });
    state = optim::initial_state(config);
  }
  stage("config", [&] {
    config.validate();
    if (config.train_images.empty() || config.train_labels.empty()) {
      fail(ErrorKind::InvalidArgument, "training data paths not given (--images/--labels)");
    }
  });
  const fs::path dir = f.out.value_or("run");
  stage("output", [&] {
    fs::create_directories(dir);
    write_text(dir / "manifest.txt", persistence::manifest(config));
  });
  const auto train_set = stage("load-data", [&] { return data::load_dataset(config.train_images, config.train_labels); });
  std::optional<data::RawDataset> test_set;
  if (!config.test_images.empty() || !config.test_labels.empty()) {
    test_set = stage("load-data", [&] { return load_test(config); });
  }

  std::ostringstream log;
  log << "epoch,pred,gen_recon,gen_kld,desc,total,seconds\n" << std::setprecision(17);
  const auto on_epoch = [&](const optim::EpochLog& e, const optim::TrainState& s) {
    const auto& l = e.losses;
    log << e.epoch << ',' << l.pred << ',' << l.gen_recon << ',' << l.gen_kld << ',' << l.desc << ',' << l.total
        << ',' << e.seconds << '\n';
    write_text(dir / "train_log.csv", log.str());
    persistence::save({config, s}, dir / "checkpoint.trsk");
    out << "epoch " << e.epoch << " total " << num(l.total) << " (" << num(e.seconds) << " s)\n";
  };
  const auto report = stage("train", [&] { return optim::train(config, train_set, state, on_epoch); });
  stage("output", [&] {
    write_text(dir / "train_log.csv", log.str());
    persistence::save({config, state}, dir / "checkpoint.trsk");
  });

  if (!report.epochs.empty()) {
    const auto& l = report.epochs.back().losses;
    out << "pred=" << num(l.pred) << " gen_recon=" << num(l.gen_recon) << " gen_kld=" << num(l.gen_kld)
        << " desc=" << num(l.desc) << " total=" << num(l.total) << '\n';
  }
  if (test_set) {
    const auto ev = stage("evaluate", [&] { return optim::evaluate(state.params, *test_set); });
    const double ari = stage("evaluate", [&] { return metrics::latent_ari(ev.mu, test_set->labels, config.seed); });
    const std::string row = metrics_row(config.mode, ev.accuracy, ev.recon_mse, ari);
    stage("output", [&] { write_text(dir / "metrics.csv", kMetricsHeader + row); });
    out << kMetricsHeader << row;
  }
  return kOk;
}

persistence::Checkpoint open_checkpoint(const Flags& f, optim::TrainConfig& config) {
  auto ck = stage("load-checkpoint", [&] { return persistence::load(*f.checkpoint); });
  config = stage("config", [&] { return resolve_config(f, ck.config); });
  return ck;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  optim::TrainConfig config;
  const auto ck = open_checkpoint(f, config);
  const auto test_set = stage("load-data", [&] { return load_test(config); });
  const auto ev = stage("evaluate", [&] { return optim::evaluate(ck.state.params, test_set); });
  const double ari = stage("evaluate", [&] { return metrics::latent_ari(ev.mu, test_set.labels, config.seed); });
  const std::string row = metrics_row(ck.config.mode, ev.accuracy, ev.recon_mse, ari);
  const fs::path dir = f.out ? fs::path(*f.out) : fs::path(*f.checkpoint).parent_path();
  stage("output", [&] {
    if (!dir.empty()) fs::create_directories(dir);
    write_text(dir / "eval.csv", kMetricsHeader + row);
  });
  out << kMetricsHeader << row;
  return kOk;
}

void write_pgm(const fs::path& path, const float* pixels, std::size_t rows, std::size_t cols) {
  std::string bytes = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const double v = std::clamp(static_cast<double>(pixels[i]), 0.0, 1.0);
    bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
  }
  write_text(path, bytes);
}

int cmd_export(const Flags& f, std::ostream& out) {
  optim::TrainConfig config;
  const auto ck = open_checkpoint(f, config);
  const auto test_set = stage("load-data", [&] { return load_test(config); });
  const fs::path dir = f.out.value_or(".");
  stage("output", [&] { fs::create_directories(dir); });

  if (f.kind == "reconstructions") {
    const std::size_t n = std::min(f.n.value_or(8), test_set.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const auto batch = data::make_batch(test_set, idx);
    const auto inf = stage("infer", [&] { return model::infer(ck.state.params, batch.pixels, false, true); });
    const std::size_t r = test_set.images.rows, c = test_set.images.cols;
    stage("output", [&] {
      for (std::size_t i = 0; i < n; ++i) {
        write_pgm(dir / ("original_" + std::to_string(i) + ".pgm"), batch.pixels.data() + i * r * c, r, c);
        write_pgm(dir / ("recon_" + std::to_string(i) + ".pgm"), inf.xhat->data() + i * r * c, r, c);
      }
    });
    out << "wrote " << 2 * n << " images to " << dir.string() << '\n';
    return kOk;
  }

  const auto ev = stage("evaluate", [&] { return optim::evaluate(ck.state.params, test_set); });
  if (f.kind == "latents") {
    const fs::path path = dir / "latents.csv";
    stage("output", [&] {
      std::ostringstream s;
      metrics::write_latent_csv(s, ev.mu, test_set.labels);
      write_text(path, s.str());
    });
    out << "wrote " << path.string() << '\n';
  } else {
    const auto proj = stage("project", [&] { return metrics::pca_project(ev.mu.cast<double>(), 2); });
    const fs::path path = dir / "projection.csv";
    stage("output", [&] {
      std::ostringstream s;
      metrics::write_projection_csv(s, proj.coords, test_set.labels);
      write_text(path, s.str());
    });
    out << "wrote " << path.string() << (proj.degenerate ? " (degenerate covariance)" : "") << '\n';
  }
  return kOk;
}

int cmd_gradalign(const Flags& f, std::ostream& out) {
  optim::TrainConfig config;
  const auto ck = open_checkpoint(f, config);
  const bool explicit_train = f.images || f.labels;
  const auto set = stage("load-data", [&] {
    if (explicit_train) return data::load_dataset(config.train_images, config.train_labels);
    return load_test(config);
  });
  const auto plan = stage("batch", [&] { return data::batch_plan(set.size(), config.batch_size, config.seed, 0); });
  const std::size_t n = std::min(*f.n, plan.size());
  std::vector<metrics::BatchAlignment> rows;
  for (std::size_t b = 0; b < n; ++b) {
    const auto batch = data::make_batch(set, plan[b]);
    rows.push_back(stage("gradalign", [&] {
      return metrics::gradient_alignment(ck.state.params, batch, config.weights, optim::step_seed(config.seed, 0, b));
    }));
  }
  const fs::path dir = f.out.value_or(".");
  const fs::path path = dir / "gradalign.csv";
  stage("output", [&] {
    fs::create_directories(dir);
    std::ostringstream s;
    metrics::write_alignment_csv(s, rows);
    write_text(path, s.str());
  });
  const auto report = metrics::summarize(std::move(rows));
  auto show = [](const std::optional<double>& v) { return v ? num(*v) : std::string("undefined"); };
  out << "batches " << report.batches.size() << '\n'
      << "mean cos(pred,gen)  " << show(report.mean_pred_gen) << '\n'
      << "mean cos(pred,desc) " << show(report.mean_pred_desc) << '\n'
      << "mean cos(gen,desc)  " << show(report.mean_gen_desc) << '\n';
  return kOk;
}

}  // namespace

int run_gradcheck(const std::vector<gradcheck::OpCheck>& checks, std::ostream& out) {
  const auto rows = gradcheck::run_suite(checks);
  bool ok = true;
  out << std::left << std::setw(26) << "op" << std::setw(14) << "max_rel_err" << std::setw(10) << "tol"
      << std::setw(9) << "checked" << std::setw(9) << "excluded" << "status\n";
  for (const auto& r : rows) {
    ok = ok && r.passed;
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << r.result.max_rel_error;
    std::ostringstream tol;
    tol << std::scientific << std::setprecision(0) << r.tolerance;
    out << std::left << std::setw(26) << r.name << std::setw(14) << err.str() << std::setw(10) << tol.str()
        << std::setw(9) << r.result.checked << std::setw(9) << r.result.excluded << (r.passed ? "ok" : "FAIL")
        << '\n';
  }
  out << (ok ? "all checks passed" : "gradcheck FAILED") << '\n';
  return ok ? kOk : kFailure;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified predictive / generative / descriptive MNIST model"};
  app.require_subcommand(1);
  app.footer("Flag values override the preset, which overrides built-in defaults.");
  Flags f;

  auto* train = app.add_subcommand("train", "Train a model and write manifest, log and checkpoint");
  add_config_flags(train, f);
  add_train_data_flags(train, f);
  add_test_data_flags(train, f);
  train->add_option("--out", f.out, "Output directory (default: run)");
  train->add_option("--checkpoint", f.checkpoint, "Resume from this checkpoint");

  auto* eval = app.add_subcommand("eval", "Test accuracy, reconstruction MSE and latent ARI");
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  add_test_data_flags(eval, f);
  eval->add_option("--seed", f.seed, "Clustering seed (default: training seed)");
  eval->add_option("--out", f.out, "Directory for eval.csv (default: next to the checkpoint)");

  auto* exp = app.add_subcommand("export", "Write latents, 2-D projection or reconstruction images");
  exp->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  exp->add_option("--kind", f.kind, "latents | projection | reconstructions")
      ->required()
      ->check(CLI::IsMember({"latents", "projection", "reconstructions"}));
  add_test_data_flags(exp, f);
  exp->add_option("-n", f.n, "Number of reconstruction pairs (default 8)")->check(CLI::PositiveNumber);
  exp->add_option("--out", f.out, "Output directory (default: .)");

  auto* align = app.add_subcommand("gradalign", "Cosine alignment of per-branch encoder gradients");
  align->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  add_train_data_flags(align, f);
  add_test_data_flags(align, f);
  align->add_option("-n", f.n, "Number of batches")->required()->check(CLI::PositiveNumber);
  align->add_option("--batch-size", f.batch_size, "Batch size")->check(CLI::PositiveNumber);
  align->add_option("--seed", f.seed, "Seed for batch order and noise");
  align->add_option("--alpha", f.alpha)->check(CLI::NonNegativeNumber);
  align->add_option("--beta", f.beta)->check(CLI::NonNegativeNumber);
  align->add_option("--gamma", f.gamma)->check(CLI::NonNegativeNumber);
  align->add_option("--lambda", f.lambda)->check(CLI::NonNegativeNumber);
  align->add_option("--out", f.out, "Directory for gradalign.csv (default: .)");

  auto* check = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    if (!app.get_subcommands().empty()) err << app.get_subcommands().front()->help();
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (exp->parsed()) return cmd_export(f, out);
    if (align->parsed()) return cmd_gradalign(f, out);
    if (check->parsed()) return run_gradcheck(gradcheck::op_suite(), out);
  } catch (const StageError& e) {
    err << "error [" << e.stage << "]: " << e.message << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace triskelion::cli
