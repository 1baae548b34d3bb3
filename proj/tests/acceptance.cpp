// Acceptance runner: one PASS/FAIL line per criterion, exit 0 iff none fail.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "triskelion/cli.hpp"
#include "triskelion/data.hpp"
#include "triskelion/error.hpp"
#include "triskelion/gradcheck.hpp"
#include "triskelion/losses.hpp"
#include "triskelion/metrics.hpp"
#include "triskelion/ops.hpp"
#include "triskelion/optim.hpp"
#include "triskelion/persistence.hpp"

namespace {

using namespace triskelion;
namespace fs = std::filesystem;

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

// Collects failed sub-checks; a criterion passes only if the list stays empty.
struct Checks {
  std::vector<std::string> failed;
  std::ostringstream notes;

  void expect(bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  }
  template <typename T>
  void note(const std::string& key, const T& value) {
    notes << (notes.tellp() > 0 ? ", " : "") << key << "=" << value;
  }
  Outcome outcome() const {
    std::string d = notes.str();
    for (const auto& f : failed) d += (d.empty() ? "" : "; ") + std::string("failed: ") + f;
    return {failed.empty() ? Verdict::Pass : Verdict::Fail, d};
  }
};

template <typename F>
bool throws(F&& f, ErrorKind kind) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::vector<std::string>& args, std::string* err_text = nullptr) {
  std::vector<std::string> full{"triskelion"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (err_text) *err_text = err.str();
  return code;
}

struct MnistPaths {
  fs::path dir;
  fs::path train_images() const { return dir / "train-images-idx3-ubyte"; }
  fs::path train_labels() const { return dir / "train-labels-idx1-ubyte"; }
  fs::path test_images() const { return dir / "t10k-images-idx3-ubyte"; }
  fs::path test_labels() const { return dir / "t10k-labels-idx1-ubyte"; }
  bool available() const {
    for (const auto& p : {train_images(), train_labels(), test_images(), test_labels()})
      if (!fs::exists(p)) return false;
    return true;
  }
};

// accuracy,recon_mse,latent_ari with empty cells for omitted fields
struct MetricsRow {
  std::optional<double> accuracy, recon_mse, latent_ari;
};

MetricsRow read_metrics(const fs::path& path) {
  std::istringstream in(slurp(path));
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  std::vector<std::optional<double>> cells;
  std::string cell;
  std::stringstream rs(row);
  while (std::getline(rs, cell, ',')) cells.push_back(cell.empty() ? std::nullopt : std::optional(std::stod(cell)));
  while (cells.size() < 3) cells.push_back(std::nullopt);
  return {cells[0], cells[1], cells[2]};
}

// The log with the wall-clock column removed.
std::string loss_columns(const fs::path& log) {
  std::istringstream in(slurp(log));
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// Trains through the CLI, as a user would. Returns the run directory.
fs::path cli_train(const MnistPaths& m, const fs::path& dir, const std::string& preset, const std::string& mode,
                   std::vector<std::string>* errors) {
  std::string err;
  const int code = run_cli({"train", "--preset", preset, "--mode", mode, "--seed", "42", "--images",
                            m.train_images().string(), "--labels", m.train_labels().string(), "--test-images",
                            m.test_images().string(), "--test-labels", m.test_labels().string(), "--out",
                            dir.string()},
                           &err);
  if (code != 0) errors->push_back("train " + preset + "/" + mode + " exited " + std::to_string(code) + ": " + err);
  return dir;
}

Outcome gradient_correctness() {
  Checks c;
  const auto start = std::chrono::steady_clock::now();
  const auto rows = gradcheck::run_suite(gradcheck::op_suite());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  double worst = 0.0;
  for (const auto& r : rows) {
    const double expected_tol = r.name.starts_with("batchnorm2d") && r.name != "batchnorm2d_eval" ? 1e-3 : 1e-4;
    c.expect(r.tolerance <= expected_tol, r.name + " tolerance looser than allowed");
    c.expect(r.passed, r.name + " rel err " + fmt(r.result.max_rel_error));
    c.expect(r.result.checked > 0, r.name + " checked nothing");
    worst = std::max(worst, r.result.max_rel_error);
  }
  c.expect(secs < 60.0, "runtime over one minute");
  c.note("ops", rows.size());
  c.note("max_rel_err", fmt(worst, 3));
  c.note("seconds", fmt(secs, 3));
  return c.outcome();
}

Outcome loss_oracles() {
  Checks c;
  Tape<double> t;
  const std::vector<std::uint8_t> labels{0, 3, 9, 4};
  const double ce = t.value(losses::loss_pred(t, t.leaf(Tensor<double>({4, 10}, 0.7)), labels)).item();
  c.expect(std::abs(ce - std::log(10.0)) <= 1e-6, "uniform CE " + fmt(ce, 12));

  auto kld = [&](const Tensor<double>& mu, const Tensor<double>& lv) {
    return t.value(ops::gaussian_kld(t, t.leaf(mu), t.leaf(lv))).item();
  };
  const double k0 = kld(Tensor<double>({3, 32}, 0.0), Tensor<double>({3, 32}, 0.0));
  const double k16 = kld(Tensor<double>({2, 32}, 1.0), Tensor<double>({2, 32}, 0.0));
  const double kln2 = kld(Tensor<double>({1, 1}, 0.0), Tensor<double>({1, 1}, std::log(2.0)));
  c.expect(std::abs(k0) <= 1e-5, "kld zero case " + fmt(k0));
  c.expect(std::abs(k16 - 16.0) <= 1e-5, "kld unit-mean case " + fmt(k16));
  c.expect(std::abs(kln2 - 0.153426) <= 1e-5, "kld ln2 case " + fmt(kln2));

  const double same = t.value(losses::loss_desc(t, t.leaf(Tensor<double>({5, 32}, 0.3)))).item();
  const double pm1 = t.value(losses::loss_desc(t, t.leaf(Tensor<double>({2, 1}, std::vector<double>{-1.0, 1.0})))).item();
  const double single = t.value(losses::loss_desc(t, t.leaf(gradcheck::random_tensor({1, 32}, 3)))).item();
  c.expect(std::abs(same) <= 1e-6, "desc identical rows " + fmt(same));
  c.expect(std::abs(pm1 - 1.0) <= 1e-6, "desc {-1,+1} " + fmt(pm1));
  c.expect(std::abs(single) <= 1e-6, "desc B=1 " + fmt(single));

  // composite recomposition on a real forward pass
  const auto p = model::init_params(42).cast<double>();
  auto buffers = p.buffers;
  data::Batch batch{Tensor<float>({6, 1, 28, 28}), {0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}};
  std::mt19937 gen(1);
  for (auto& v : batch.pixels.values()) v = static_cast<float>(gen() % 256) / 255.0f;
  Rng rng(7);
  const losses::LossWeights w;
  const auto g = optim::build_step(p, buffers, batch, optim::TrainMode::Unified, w, rng);
  const auto b = losses::read_breakdown(g->tape, g->loss);
  const double recomposed = w.alpha * b.pred + w.beta * (b.gen_recon + w.lambda_kld * b.gen_kld) + w.gamma * b.desc;
  c.expect(std::abs(b.total - recomposed) <= 1e-6 * std::max(1.0, std::abs(recomposed)),
           "L_TRI recomposition " + fmt(b.total - recomposed));
  const double tri = t.value(losses::loss_tri(t, t.leaf(Tensor<double>({1}, 1.0)), t.leaf(Tensor<double>({1}, 1.0)),
                                              t.leaf(Tensor<double>({1}, 1.0)), w))
                         .item();
  c.expect(std::abs(tri - 1.0) <= 1e-6, "L_TRI unit components " + fmt(tri));
  c.note("ce", fmt(ce, 10));
  c.note("kld", fmt(k0) + "/" + fmt(k16) + "/" + fmt(kln2));
  return c.outcome();
}

double pair_counting_ari(const std::vector<int>& a, const std::vector<int>& b) {
  double both = 0, in_a = 0, in_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      both += (a[i] == a[j]) && (b[i] == b[j]);
      in_a += a[i] == a[j];
      in_b += b[i] == b[j];
    }
  const double n = static_cast<double>(a.size()), pairs = n * (n - 1) / 2;
  const double expected = in_a * in_b / pairs, max_index = 0.5 * (in_a + in_b);
  if (max_index == expected) return 1.0;
  return (both - expected) / (max_index - expected);
}

Outcome ari_oracle() {
  Checks c;
  const std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0}, x{0, 1, 0, 1};
  const double hand = metrics::adjusted_rand_index<int>(a, x);
  c.expect(hand == -0.5, "hand contingency value " + fmt(hand, 17));
  c.expect(metrics::adjusted_rand_index<int>(a, a) == 1.0, "identical partitions");
  c.expect(metrics::adjusted_rand_index<int>(a, b) == 1.0, "permuted partitions");
  std::mt19937 gen(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + gen() % 11;
    const int ka = 1 + static_cast<int>(gen() % 4), kb = 1 + static_cast<int>(gen() % 4);
    std::vector<int> p(n), q(n);
    for (auto& v : p) v = static_cast<int>(gen() % ka);
    for (auto& v : q) v = static_cast<int>(gen() % kb);
    worst = std::max(worst, std::abs(metrics::adjusted_rand_index<int>(p, q) - pair_counting_ari(p, q)));
  }
  c.expect(worst <= 1e-12, "pair-counting oracle diff " + fmt(worst));
  c.note("hand", fmt(hand));
  c.note("max_oracle_diff", fmt(worst, 3));
  return c.outcome();
}

Outcome kmeans_oracle() {
  Checks c;
  std::mt19937 gen(77);
  std::normal_distribution<double> noise;
  double worst_gap = 0.0;
  bool monotone = true;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> pts({8, 2});
    for (auto& v : pts.values()) v = noise(gen);
    double best = 1e300;
    for (unsigned mask = 1; mask < 255; ++mask) {
      double inertia = 0;
      for (unsigned side = 0; side < 2; ++side) {
        double cx = 0, cy = 0, n = 0;
        for (unsigned i = 0; i < 8; ++i)
          if (((mask >> i) & 1u) == side) cx += pts[2 * i], cy += pts[2 * i + 1], ++n;
        cx /= n;
        cy /= n;
        for (unsigned i = 0; i < 8; ++i)
          if (((mask >> i) & 1u) == side) inertia += std::pow(pts[2 * i] - cx, 2) + std::pow(pts[2 * i + 1] - cy, 2);
      }
      best = std::min(best, inertia);
    }
    // best over restarts; 50 restarts on 8 points
    const auto cl = metrics::kmeans(pts, 2, 50, 300, static_cast<std::uint64_t>(trial));
    worst_gap = std::max(worst_gap, (cl.inertia - best) / best);
    for (std::uint64_t r = 0; r < 10; ++r) {
      Rng rng(mix_seed(trial, r));
      const auto run = metrics::kmeans_single(pts, 2, 300, rng);
      for (std::size_t i = 1; i < run.inertia_history.size(); ++i)
        monotone = monotone && run.inertia_history[i] <= run.inertia_history[i - 1] * (1 + 1e-12);
    }
  }
  c.expect(std::abs(worst_gap) <= 1e-9, "gap to exhaustive optimum " + fmt(worst_gap));
  c.expect(monotone, "inertia increased within a run");
  c.note("instances", 20);
  c.note("max_rel_gap", fmt(worst_gap, 3));
  return c.outcome();
}

Outcome gradient_decomposition(const MnistPaths& m) {
  Checks c;
  const auto ds = m.available() ? data::load_dataset(m.train_images(), m.train_labels())
                                : data::RawDataset{};
  c.expect(m.available(), "MNIST not found; fixed batch comes from the training set");
  if (!m.available()) return c.outcome();
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
  const auto batch = data::make_batch(ds, idx);
  const auto p = model::init_params(42).cast<double>();
  auto buffers = p.buffers;
  Rng rng(optim::step_seed(42, 0, 0));
  const losses::LossWeights w;
  const auto g = optim::build_step(p, buffers, batch, optim::TrainMode::Unified, w, rng);
  const auto total = optim::parameter_gradients(*g, g->loss.total);
  const auto pred = optim::parameter_gradients(*g, *g->loss.pred);
  const auto gen = optim::parameter_gradients(*g, g->loss.gen->combined);
  const auto desc = optim::parameter_gradients(*g, g->loss.desc);
  double diff = 0.0, norm = 0.0;
  for (const auto& [name, gt] : total) {
    for (std::size_t i = 0; i < gt.size(); ++i) {
      double r = 0.0;
      if (pred.count(name)) r += w.alpha * pred.at(name)[i];
      if (gen.count(name)) r += w.beta * gen.at(name)[i];
      if (desc.count(name)) r += w.gamma * desc.at(name)[i];
      diff += (gt[i] - r) * (gt[i] - r);
      norm += gt[i] * gt[i];
    }
  }
  const double rel = std::sqrt(diff / norm);
  c.expect(total.size() == model::architecture().size(), "composite gradient misses parameters");
  c.expect(rel <= 1e-5, "relative difference " + fmt(rel));
  c.note("rel_diff", fmt(rel, 3));
  return c.outcome();
}

struct DeskRuns {
  fs::path unified, unified_again, predictive;
  std::vector<std::string> errors;
};

Outcome desk_training(const DeskRuns& runs) {
  Checks c;
  for (const auto& e : runs.errors) c.expect(false, e);
  if (!runs.errors.empty()) return c.outcome();
  const auto u = read_metrics(runs.unified / "metrics.csv");
  const auto p = read_metrics(runs.predictive / "metrics.csv");
  c.expect(u.accuracy && *u.accuracy >= 0.95, "unified accuracy " + fmt(u.accuracy.value_or(NAN)) + " < 0.95");
  c.expect(p.accuracy && *p.accuracy >= 0.95, "predictive-only accuracy " + fmt(p.accuracy.value_or(NAN)) + " < 0.95");
  c.expect(u.recon_mse && *u.recon_mse <= 0.06, "unified recon MSE " + fmt(u.recon_mse.value_or(NAN)) + " > 0.06");
  c.note("unified_acc", fmt(u.accuracy.value_or(NAN)));
  c.note("unified_mse", fmt(u.recon_mse.value_or(NAN)));
  c.note("unified_ari", fmt(u.latent_ari.value_or(NAN)));
  c.note("predictive_acc", fmt(p.accuracy.value_or(NAN)));
  return c.outcome();
}

Outcome paper_scale(const MnistPaths& m, const fs::path& work) {
  Checks c;
  if (!m.available()) {
    c.expect(false, "MNIST not found");
    return c.outcome();
  }
  std::vector<std::string> errors;
  const auto u = cli_train(m, work / "paper_unified", "paper", "unified", &errors);
  const auto p = cli_train(m, work / "paper_predictive", "paper", "predictive_only", &errors);
  const auto g = cli_train(m, work / "paper_generative", "paper", "generative_only", &errors);
  for (const auto& e : errors) c.expect(false, e);
  if (!errors.empty()) return c.outcome();
  const auto mu = read_metrics(u / "metrics.csv"), mp = read_metrics(p / "metrics.csv"),
             mg = read_metrics(g / "metrics.csv");
  const double ua = mu.accuracy.value_or(NAN), pa = mp.accuracy.value_or(NAN);
  const double umse = mu.recon_mse.value_or(NAN), gmse = mg.recon_mse.value_or(NAN);
  const double uari = mu.latent_ari.value_or(NAN), gari = mg.latent_ari.value_or(NAN);
  c.expect(ua >= 0.983 && ua <= 0.992, "unified accuracy " + fmt(ua) + " outside [0.983, 0.992]");
  c.expect(pa >= 0.980 && pa <= 0.990, "predictive-only accuracy " + fmt(pa) + " outside [0.980, 0.990]");
  c.expect(umse <= gmse, "unified MSE " + fmt(umse) + " > generative-only " + fmt(gmse));
  c.expect(uari >= gari + 0.15, "unified ARI " + fmt(uari) + " < generative-only " + fmt(gari) + " + 0.15");
  c.expect(uari >= 0.85, "unified ARI " + fmt(uari) + " < 0.85");
  c.note("unified_acc", fmt(ua));
  c.note("predictive_acc", fmt(pa));
  c.note("unified_mse", fmt(umse));
  c.note("generative_mse", fmt(gmse));
  c.note("unified_ari", fmt(uari));
  c.note("generative_ari", fmt(gari));
  return c.outcome();
}

Outcome determinism(const DeskRuns& runs, const MnistPaths& m) {
  Checks c;
  for (const auto& e : runs.errors) c.expect(false, e);
  if (!runs.errors.empty()) return c.outcome();
  c.expect(slurp(runs.unified / "manifest.txt") == slurp(runs.unified_again / "manifest.txt"), "manifests differ");
  const auto a = loss_columns(runs.unified / "train_log.csv"), b = loss_columns(runs.unified_again / "train_log.csv");
  c.expect(!a.empty() && a == b, "epoch-loss CSVs differ");
  c.expect(slurp(runs.unified / "metrics.csv") == slurp(runs.unified_again / "metrics.csv"), "metric outputs differ");

  const auto ck = persistence::load(runs.unified / "checkpoint.trsk");
  const auto reloaded = persistence::decode(persistence::encode(ck));
  const auto file = data::read_file(runs.unified / "checkpoint.trsk");
  c.expect(persistence::encode(reloaded) == file, "save after load is not byte-identical");
  const auto test = data::load_dataset(m.test_images(), m.test_labels());
  const auto before = optim::evaluate(ck.state.params, test), after = optim::evaluate(reloaded.state.params, test);
  c.expect(before.mu == after.mu && before.logits == after.logits && before.recon_mse == after.recon_mse,
           "evaluate() differs after checkpoint round-trip");
  c.note("epochs_compared", std::count(a.begin(), a.end(), '\n') - 1);
  return c.outcome();
}

Outcome data_layer(const MnistPaths& m) {
  Checks c;
  using Bytes = std::vector<std::uint8_t>;
  c.expect(m.available(), "MNIST not found");
  if (m.available()) {
    for (const auto& p : {m.train_images(), m.test_images()}) {
      const auto bytes = data::read_file(p);
      c.expect(data::encode_idx_images(data::parse_idx_images(bytes)) == bytes, "round-trip " + p.filename().string());
    }
    for (const auto& p : {m.train_labels(), m.test_labels()}) {
      const auto bytes = data::read_file(p);
      c.expect(data::encode_idx_labels(data::parse_idx_labels(bytes)) == bytes, "round-trip " + p.filename().string());
    }
    const auto ds = data::load_dataset(m.train_images(), m.train_labels());
    c.expect(ds.size() == 60000, "train count " + std::to_string(ds.size()));
  }
  auto header = [](std::uint32_t magic, std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
    Bytes b;
    for (std::uint32_t v : {magic, n, rows, cols})
      for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
    return b;
  };
  Bytes img = header(0x803, 1, 28, 28);
  img.resize(img.size() + 784);
  Bytes wrong_magic = img;
  wrong_magic[3] = 0x01;
  c.expect(throws([&] { data::parse_idx_images(wrong_magic); }, ErrorKind::WrongMagic), "image WrongMagic");
  Bytes short_header(img.begin(), img.begin() + 12);
  c.expect(throws([&] { data::parse_idx_images(short_header); }, ErrorKind::Truncated), "image short header");
  Bytes two = header(0x803, 2, 28, 28);
  two.resize(two.size() + 784);
  c.expect(throws([&] { data::parse_idx_images(two); }, ErrorKind::Truncated), "image short payload");
  Bytes dims = header(0x803, 1, 27, 28);
  dims.resize(dims.size() + 27 * 28);
  c.expect(throws([&] { data::parse_idx_images(dims); }, ErrorKind::DimensionMismatch), "image 27x28");
  const Bytes lab_magic{0, 0, 8, 3, 0, 0, 0, 0};
  c.expect(throws([&] { data::parse_idx_labels(lab_magic); }, ErrorKind::WrongMagic), "label WrongMagic");
  const Bytes lab_short{0, 0, 8, 1, 0, 0, 0, 3, 1};
  c.expect(throws([&] { data::parse_idx_labels(lab_short); }, ErrorKind::Truncated), "label short payload");
  const Bytes lab_hdr{0, 0, 8, 1, 0};
  c.expect(throws([&] { data::parse_idx_labels(lab_hdr); }, ErrorKind::Truncated), "label short header");
  const Bytes lab_range{0, 0, 8, 1, 0, 0, 0, 1, 10};
  c.expect(throws([&] { data::parse_idx_labels(lab_range); }, ErrorKind::LabelOutOfRange), "label 10");
  c.expect(throws([&] { data::batch_iter(data::RawDataset{}, 8, 1, 0); }, ErrorKind::EmptyDataset), "empty dataset");
  c.note("malformed_cases", 9);
  return c.outcome();
}

void report(int number, const std::string& title, const Outcome& o, double seconds, int& failures) {
  const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "SKIP";
  if (o.verdict == Verdict::Fail) ++failures;
  std::cout << "criterion " << number << " [" << tag << "] " << title << " (" << fmt(seconds, 3) << " s)";
  if (!o.detail.empty()) std::cout << ": " << o.detail;
  std::cout << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string mnist = TRISKELION_MNIST_DIR;
  std::string work = (fs::temp_directory_path() / "triskelion_acceptance").string();
  bool extended = false;
  app.add_option("--mnist", mnist, "Directory with the four MNIST IDX files");
  app.add_option("--work", work, "Scratch directory for training runs");
  app.add_flag("--extended", extended, "Also run the full-scale (60k, 20 epoch) criterion");
  CLI11_PARSE(app, argc, argv);

  const MnistPaths m{mnist};
  const fs::path dir = work;
  fs::create_directories(dir);
  int failures = 0;
  auto timed = [&](int number, const std::string& title, const std::function<Outcome()>& f) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    report(number, title, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(),
           failures);
  };

  timed(1, "gradient correctness", gradient_correctness);
  timed(2, "loss-formula oracles", loss_oracles);
  timed(3, "ARI oracle", ari_oracle);
  timed(4, "k-means oracle", kmeans_oracle);
  timed(5, "gradient decomposition", [&] { return gradient_decomposition(m); });

  DeskRuns desk;
  timed(6, "desk-tier training", [&] {
    if (!m.available()) return Outcome{Verdict::Fail, "MNIST not found in " + mnist};
    desk.unified = cli_train(m, dir / "desk_unified", "desk", "unified", &desk.errors);
    desk.predictive = cli_train(m, dir / "desk_predictive", "desk", "predictive_only", &desk.errors);
    return desk_training(desk);
  });
  if (extended) {
    timed(7, "paper-scale reproduction", [&] { return paper_scale(m, dir); });
  } else {
    report(7, "paper-scale reproduction", {Verdict::Skip, "extended suite; run with --extended"}, 0.0, failures);
  }
  timed(8, "determinism", [&] {
    if (!m.available()) return Outcome{Verdict::Fail, "MNIST not found in " + mnist};
    if (desk.unified.empty()) return Outcome{Verdict::Fail, "desk runs missing"};
    desk.unified_again = cli_train(m, dir / "desk_unified_again", "desk", "unified", &desk.errors);
    return determinism(desk, m);
  });
  timed(9, "data layer", [&] { return data_layer(m); });

  std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: " + std::to_string(failures) +
                                                                        " criterion(s) failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
