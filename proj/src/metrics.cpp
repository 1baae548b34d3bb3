#include "triskelion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "triskelion/error.hpp"
#include "triskelion/rng.hpp"

namespace triskelion::metrics {
namespace {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

// Nearest center per point (lowest index on ties); returns the inertia.
double assign(const Tensor<double>& points, const Tensor<double>& centers, std::vector<std::size_t>& out) {
  const std::size_t n = points.dim(0), d = points.dim(1), k = centers.dim(0);
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = points.data() + i * d;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double dist = squared_distance(p, centers.data() + c * d, d);
      if (dist < best) {
        best = dist;
        best_c = c;
      }
    }
    out[i] = best_c;
    inertia += best;
  }
  return inertia;
}

double inertia_of(const Tensor<double>& points, const Tensor<double>& centers, const std::vector<std::size_t>& assign) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += squared_distance(points.data() + i * d, centers.data() + assign[i] * d, d);
  return acc;
}

// Means of the assigned points; empty clusters take the point currently
// farthest from its own center.
void update_centers(const Tensor<double>& points, std::vector<std::size_t>& assign, Tensor<double>& centers) {
  const std::size_t n = points.dim(0), d = points.dim(1), k = centers.dim(0);
  std::vector<std::size_t> counts(k, 0);
  counts.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) ++counts[assign[i]];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    std::size_t far = 0;
    double far_dist = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (counts[assign[i]] <= 1) continue;
      const double dist = squared_distance(points.data() + i * d, centers.data() + assign[i] * d, d);
      if (dist > far_dist) {
        far_dist = dist;
        far = i;
      }
    }
    --counts[assign[far]];
    assign[far] = c;
    counts[c] = 1;
  }
  centers.fill(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* ctr = centers.data() + assign[i] * d;
    const double* p = points.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) ctr[j] += p[j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) centers[c * d + j] /= static_cast<double>(counts[c]);
  }
}

Tensor<double> plus_plus_seed(const Tensor<double>& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.dim(0), d = points.dim(1);
  Tensor<double> centers({k, d});
  auto take = [&](std::size_t c, std::size_t i) {
    std::copy(points.data() + i * d, points.data() + (i + 1) * d, centers.data() + c * d);
  };
  take(0, static_cast<std::size_t>(rng.below(n)));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(points.data() + i * d, centers.data() + (c - 1) * d, d));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double run = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        run += nearest[i];
        if (run > target && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    take(c, pick);
  }
  return centers;
}

template <typename T>
std::size_t argmax_row(const T* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

double accuracy(const Tensor<float>& logits, std::span<const std::uint8_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    fail(ErrorKind::ShapeMismatch, "accuracy: logits rows must match label count");
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (argmax_row(logits.data() + i * c, c) == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

KMeansRun kmeans_single(const Tensor<double>& points, std::size_t k, std::size_t max_iters, Rng& rng) {
  if (points.rank() != 2) fail(ErrorKind::ShapeMismatch, "kmeans expects an N×d matrix");
  const std::size_t n = points.dim(0);
  if (k == 0 || n < k) fail(ErrorKind::TooFewPoints, std::to_string(n) + " points for K=" + std::to_string(k));
  KMeansRun run;
  Tensor<double> centers = plus_plus_seed(points, k, rng);
  std::vector<std::size_t> current(n, 0), previous;
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    run.inertia_history.push_back(assign(points, centers, current));
    ++run.iterations;
    if (current == previous) break;
    update_centers(points, current, centers);
    previous = current;
  }
  run.clustering.inertia = inertia_of(points, centers, current);
  run.clustering.assignments = std::move(current);
  run.clustering.centers = std::move(centers);
  return run;
}

Clustering kmeans(const Tensor<double>& points, std::size_t k, std::size_t restarts, std::size_t max_iters,
                  std::uint64_t seed) {
  if (points.rank() != 2) fail(ErrorKind::ShapeMismatch, "kmeans expects an N×d matrix");
  if (k == 0 || points.dim(0) < k) {
    fail(ErrorKind::TooFewPoints, std::to_string(points.dim(0)) + " points for K=" + std::to_string(k));
  }
  std::optional<Clustering> best;
  for (std::size_t r = 0; r < std::max<std::size_t>(restarts, 1); ++r) {
    Rng rng(mix_seed(seed, r));
    auto run = kmeans_single(points, k, max_iters, rng);
    if (!best || run.clustering.inertia < best->inertia) best = std::move(run.clustering);
  }
  return std::move(*best);
}

template <typename L>
double adjusted_rand_index(std::span<const L> a, std::span<const L> b) {
  if (a.size() != b.size()) fail(ErrorKind::LengthMismatch, "partitions have different lengths");
  if (a.size() < 2) fail(ErrorKind::InvalidArgument, "ARI needs at least two items");
  std::map<std::pair<L, L>, std::int64_t> joint;
  std::map<L, std::int64_t> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  using Wide = __int128;
  auto pairs = [](std::int64_t n) { return static_cast<Wide>(n) * (n - 1) / 2; };
  Wide index = 0, sum_a = 0, sum_b = 0;
  for (const auto& [key, n] : joint) index += pairs(n);
  for (const auto& [key, n] : rows) sum_a += pairs(n);
  for (const auto& [key, n] : cols) sum_b += pairs(n);
  const Wide total = pairs(static_cast<std::int64_t>(a.size()));
  // ARI = (index - E) / (M - E) with E = sum_a*sum_b/total and
  // M = (sum_a+sum_b)/2, scaled by 2*total to stay in integers.
  const Wide numerator = 2 * index * total - 2 * sum_a * sum_b;
  const Wide denominator = (sum_a + sum_b) * total - 2 * sum_a * sum_b;
  if (denominator == 0) return 1.0;
  return static_cast<double>(static_cast<long double>(numerator) / static_cast<long double>(denominator));
}

template double adjusted_rand_index<std::uint8_t>(std::span<const std::uint8_t>, std::span<const std::uint8_t>);
template double adjusted_rand_index<int>(std::span<const int>, std::span<const int>);
template double adjusted_rand_index<std::size_t>(std::span<const std::size_t>, std::span<const std::size_t>);

double latent_ari(const Tensor<float>& mu, std::span<const std::uint8_t> labels, std::uint64_t seed) {
  if (mu.rank() != 2 || mu.dim(0) != labels.size()) fail(ErrorKind::LengthMismatch, "mu rows must match labels");
  const Clustering c = kmeans(mu.cast<double>(), 10, 10, 300, seed);
  std::vector<std::size_t> truth(labels.begin(), labels.end());
  return adjusted_rand_index<std::size_t>(c.assignments, truth);
}

Projection pca_project(const Tensor<double>& points, std::size_t out_dims) {
  if (points.rank() != 2) fail(ErrorKind::ShapeMismatch, "pca expects an N×d matrix");
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (out_dims == 0 || out_dims > d) fail(ErrorKind::InvalidArgument, "out_dims must lie in [1, d]");

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += points[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);
  Tensor<double> centered({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = points[i * d + j] - mean[j];

  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.data() + i * d;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = r; c < d; ++c) cov[r * d + c] += row[r] * row[c];
  }
  double trace = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = r; c < d; ++c) {
      cov[r * d + c] /= denom;
      cov[c * d + r] = cov[r * d + c];
    }
    trace += cov[r * d + r];
  }

  Projection out;
  out.coords = Tensor<double>({n, out_dims});
  out.components = Tensor<double>({out_dims, d});
  if (!(trace > 0.0)) {
    out.degenerate = true;
    out.variances.assign(out_dims, 0.0);
    return out;
  }

  Rng rng(0x9CA);
  std::vector<double> v(d), next(d);
  auto normalize = [&](std::vector<double>& x) {
    double norm = 0.0;
    for (double e : x) norm += e * e;
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& e : x) e /= norm;
    return norm;
  };
  auto orthogonalize = [&](std::vector<double>& x, std::size_t upto) {
    for (std::size_t p = 0; p < upto; ++p) {
      const double* comp = out.components.data() + p * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += x[j] * comp[j];
      for (std::size_t j = 0; j < d; ++j) x[j] -= dot * comp[j];
    }
  };

  for (std::size_t comp = 0; comp < out_dims; ++comp) {
    for (auto& e : v) e = rng.normal();
    orthogonalize(v, comp);
    normalize(v);
    double lambda = 0.0;
    for (int it = 0; it < 1000; ++it) {
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += cov[r * d + c] * v[c];
        next[r] = acc;
      }
      orthogonalize(next, comp);
      lambda = normalize(next);
      if (lambda <= 1e-300 * trace) {
        // Deflated covariance is numerically zero: any unit vector
        // orthogonal to earlier components spans the null space.
        next = v;
        lambda = 0.0;
        break;
      }
      double delta = 0.0;
      for (std::size_t j = 0; j < d; ++j) delta = std::max(delta, std::abs(next[j] - v[j]));
      v.swap(next);
      if (delta < 1e-8) break;
    }
    if (lambda == 0.0) v = next;
    orthogonalize(v, comp);
    normalize(v);
    std::size_t peak = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(v[j]) > std::abs(v[peak])) peak = j;
    }
    if (v[peak] < 0.0)
      for (double& e : v) e = -e;
    std::copy(v.begin(), v.end(), out.components.data() + comp * d);
    // Rayleigh quotient for the reported variance.
    double rq = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += cov[r * d + c] * v[c];
      rq += v[r] * acc;
    }
    out.variances.push_back(rq);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.data() + i * d;
    for (std::size_t comp = 0; comp < out_dims; ++comp) {
      const double* c = out.components.data() + comp * d;
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * c[j];
      out.coords[i * out_dims + comp] = acc;
    }
  }
  return out;
}

template <typename T>
std::vector<double> encoder_gradient(const optim::StepGraph<T>& graph, Var root) {
  const auto grads = backward(graph.tape, root);
  std::vector<double> flat;
  for (const auto& [name, var] : graph.params) {
    if (model::group_of(name) != model::Group::Encoder) continue;
    const auto g = grads.of(var);
    flat.insert(flat.end(), g.values().begin(), g.values().end());
  }
  return flat;
}

template std::vector<double> encoder_gradient(const optim::StepGraph<float>&, Var);
template std::vector<double> encoder_gradient(const optim::StepGraph<double>&, Var);

std::optional<double> cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorKind::LengthMismatch, "cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return std::nullopt;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

BatchAlignment gradient_alignment(const model::ModelParams& params, const data::Batch& batch,
                                  const losses::LossWeights& weights, std::uint64_t seed) {
  auto buffers = params.buffers;
  Rng rng(seed);
  const auto graph = optim::build_step(params, buffers, batch, optim::TrainMode::Unified, weights, rng);
  const auto pred = encoder_gradient(*graph, *graph->loss.pred);
  const auto gen = encoder_gradient(*graph, graph->loss.gen->combined);
  const auto desc = encoder_gradient(*graph, graph->loss.desc);
  return BatchAlignment{cosine(pred, gen), cosine(pred, desc), cosine(gen, desc)};
}

AlignmentReport summarize(std::vector<BatchAlignment> batches) {
  AlignmentReport report;
  auto mean_of = [&](auto member) -> std::optional<double> {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& b : batches) {
      if (const auto& v = b.*member) {
        acc += *v;
        ++n;
      }
    }
    if (n == 0) return std::nullopt;
    return acc / static_cast<double>(n);
  };
  report.mean_pred_gen = mean_of(&BatchAlignment::pred_gen);
  report.mean_pred_desc = mean_of(&BatchAlignment::pred_desc);
  report.mean_gen_desc = mean_of(&BatchAlignment::gen_desc);
  report.batches = std::move(batches);
  return report;
}

void write_latent_csv(std::ostream& out, const Tensor<float>& mu, std::span<const std::uint8_t> labels) {
  const std::size_t d = mu.dim(1);
  out << "idx,label";
  for (std::size_t j = 0; j < d; ++j) out << ",mu_" << j;
  out << '\n' << std::setprecision(9);
  for (std::size_t i = 0; i < mu.dim(0); ++i) {
    out << i << ',' << static_cast<int>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) out << ',' << mu[i * d + j];
    out << '\n';
  }
}

void write_projection_csv(std::ostream& out, const Tensor<double>& coords, std::span<const std::uint8_t> labels) {
  out << "idx,label,pc1,pc2\n" << std::setprecision(17);
  for (std::size_t i = 0; i < coords.dim(0); ++i) {
    out << i << ',' << static_cast<int>(labels[i]) << ',' << coords[i * 2] << ',' << coords[i * 2 + 1] << '\n';
  }
}

void write_alignment_csv(std::ostream& out, const std::vector<BatchAlignment>& batches) {
  out << "batch,cos_pred_gen,cos_pred_desc,cos_gen_desc\n" << std::setprecision(17);
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (std::size_t i = 0; i < batches.size(); ++i) {
    out << i << ',';
    cell(batches[i].pred_gen);
    out << ',';
    cell(batches[i].pred_desc);
    out << ',';
    cell(batches[i].gen_desc);
    out << '\n';
  }
}

}  // namespace triskelion::metrics
