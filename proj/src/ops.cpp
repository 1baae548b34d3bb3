#include "triskelion/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace triskelion::ops {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
Var emit(Tape<T>& tape, Tensor<T> value, std::vector<Var> inputs, typename Tape<T>::BackwardFn fn,
         const char* op) {
  if (!value.all_finite()) fail(ErrorKind::NonFiniteValue, std::string(op) + " produced a non-finite value");
  return tape.record(std::move(value), std::move(inputs), std::move(fn));
}

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + detail);
}

void expect_rank(const char* op, const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    shape_error(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " + shape_string(s));
  }
}

// Hash of a boolean branch pattern, folded into the tape's kink signature.
template <typename Pred>
std::uint64_t pattern_hash(std::size_t n, Pred&& pred) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= pred(i) ? 0x9FULL : 0x35ULL;
    h *= 0x100000001B3ULL;
  }
  return h;
}

struct PatchGrid {
  std::size_t batch, channels, in_h, in_w, kernel, out_h, out_w, stride, padding;
  std::size_t rows() const { return batch * out_h * out_w; }
  std::size_t cols() const { return channels * kernel * kernel; }
};

// Unfold B×C×H×W into a (B·Ho·Wo) × (C·k·k) patch matrix, one patch per row.
template <typename T>
void im2col(const T* src, const PatchGrid& g, T* dst) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t ncols = g.cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        T* row = dst + ((b * g.out_h + oh) * g.out_w + ow) * ncols;
        for (std::size_t c = 0; c < g.channels; ++c) {
          const T* plane = src + (b * g.channels + c) * g.in_h * g.in_w;
          for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            T* out = row + c * kk + kh * g.kernel;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
              std::fill(out, out + g.kernel, T{0});
              continue;
            }
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              out[kw] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w))
                            ? T{0}
                            : plane[static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw)];
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch rows back onto B×C×H×W.
template <typename T>
void col2im(const T* src, const PatchGrid& g, T* dst) {
  const std::size_t kk = g.kernel * g.kernel;
  const std::size_t ncols = g.cols();
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      for (std::size_t ow = 0; ow < g.out_w; ++ow) {
        const T* row = src + ((b * g.out_h + oh) * g.out_w + ow) * ncols;
        for (std::size_t c = 0; c < g.channels; ++c) {
          T* plane = dst + (b * g.channels + c) * g.in_h * g.in_w;
          for (std::size_t kh = 0; kh < g.kernel; ++kh) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            const T* in = row + c * kk + kh * g.kernel;
            for (std::size_t kw = 0; kw < g.kernel; ++kw) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                        static_cast<std::ptrdiff_t>(g.padding);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              plane[static_cast<std::size_t>(ih) * g.in_w + static_cast<std::size_t>(iw)] += in[kw];
            }
          }
        }
      }
    }
  }
}

// B×C×P (channel-major) <-> (B·P)×C (channel-minor).
template <typename T>
void nchw_to_rows(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        dst[(b * plane + p) * channels + c] = src[(b * channels + c) * plane + p];
}

template <typename T>
void rows_to_nchw(const T* src, std::size_t batch, std::size_t channels, std::size_t plane, T* dst) {
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < plane; ++p)
        dst[(b * channels + c) * plane + p] = src[(b * plane + p) * channels + c];
}

template <typename T>
void add_scaled(Tensor<T>& dst, const Tensor<T>& src, T factor) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += factor * s[i];
}

}  // namespace

std::size_t conv2d_output_extent(std::size_t in, std::size_t kernel, const Conv2dGeometry& g) {
  const auto padded = static_cast<std::ptrdiff_t>(in + 2 * g.padding) - static_cast<std::ptrdiff_t>(kernel);
  if (padded < 0 || g.stride == 0) return 0;
  return static_cast<std::size_t>(padded) / g.stride + 1;
}

std::size_t conv_transpose2d_output_extent(std::size_t in, std::size_t kernel, const Conv2dGeometry& g) {
  const auto out = static_cast<std::ptrdiff_t>((in - 1) * g.stride + kernel + g.output_padding) -
                   static_cast<std::ptrdiff_t>(2 * g.padding);
  return out < 1 ? 0 : static_cast<std::size_t>(out);
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) shape_error("add", shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return emit(tape, std::move(out), {a, b},
              [a, b](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                if (t.requires_grad(a)) add_scaled(grads.slot(a), g, T{1});
                if (t.requires_grad(b)) add_scaled(grads.slot(b), g, T{1});
              },
              "add");
}

template <typename T>
Var scale(Tape<T>& tape, Var a, T factor) {
  const auto& av = tape.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * av[i];
  return emit(tape, std::move(out), {a},
              [a, factor](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                add_scaled(grads.slot(a), g, factor);
              },
              "scale");
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  double acc = 0.0;
  for (T v : av.values()) acc += v;
  return emit(tape, Tensor<T>::scalar(static_cast<T>(acc)), {a},
              [a](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[0];
              },
              "sum");
}

template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape shape) {
  const auto& av = tape.value(a);
  if (shape_size(shape) != av.size()) {
    shape_error("reshape", shape_string(av.shape()) + " -> " + shape_string(shape));
  }
  return emit(tape, av.reshaped(std::move(shape)), {a},
              [a](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
              },
              "reshape");
}

template <typename T>
Var slice_columns(Tape<T>& tape, Var a, std::size_t begin, std::size_t count) {
  const auto& av = tape.value(a);
  expect_rank("slice_columns", av.shape(), 2, "input");
  const std::size_t rows = av.dim(0);
  const std::size_t cols = av.dim(1);
  if (count == 0 || begin + count > cols) shape_error("slice_columns", "column range out of bounds");
  Tensor<T> out({rows, count});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = av[r * cols + begin + c];
  return emit(tape, std::move(out), {a},
              [a, rows, cols, begin, count](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(a);
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t c = 0; c < count; ++c) slot[r * cols + begin + c] += g[r * count + c];
              },
              "slice_columns");
}

template <typename T>
Var clamp(Tape<T>& tape, Var a, T lo, T hi) {
  const auto& av = tape.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
  if (tape.tracks_kinks()) {
    tape.fold_kink(pattern_hash(av.size(), [&](std::size_t i) { return av[i] > lo && av[i] < hi; }));
  }
  return emit(tape, std::move(out), {a},
              [a, lo, hi](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const auto& x = t.value(a);
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) {
                  if (x[i] > lo && x[i] < hi) slot[i] += g[i];
                }
              },
              "clamp");
}

template <typename T>
Var linear(Tape<T>& tape, Var input, Var weight, Var bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  const auto& b = tape.value(bias);
  expect_rank("linear", x.shape(), 2, "input");
  expect_rank("linear", w.shape(), 2, "weight");
  expect_rank("linear", b.shape(), 1, "bias");
  const std::size_t rows = x.dim(0), in = x.dim(1), out_features = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out_features) {
    shape_error("linear", "input " + shape_string(x.shape()) + ", weight " + shape_string(w.shape()) +
                              ", bias " + shape_string(b.shape()));
  }
  Tensor<T> out({rows, out_features});
  ConstMatrixMap<T> xm(x.data(), rows, in);
  ConstMatrixMap<T> wm(w.data(), out_features, in);
  MatrixMap<T> om(out.data(), rows, out_features);
  om.noalias() = xm * wm.transpose();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out_features; ++j) out[r * out_features + j] += b[j];
  return emit(tape, std::move(out), {input, weight, bias},
              [input, weight, bias, rows, in, out_features](const Tape<T>& t, const Tensor<T>& g,
                                                            Gradients<T>& grads) {
                ConstMatrixMap<T> gm(g.data(), rows, out_features);
                if (t.requires_grad(input)) {
                  ConstMatrixMap<T> wm(t.value(weight).data(), out_features, in);
                  MatrixMap<T> dx(grads.slot(input).data(), rows, in);
                  dx.noalias() += gm * wm;
                }
                if (t.requires_grad(weight)) {
                  ConstMatrixMap<T> xm(t.value(input).data(), rows, in);
                  MatrixMap<T> dw(grads.slot(weight).data(), out_features, in);
                  dw.noalias() += gm.transpose() * xm;
                }
                if (t.requires_grad(bias)) {
                  auto& db = grads.slot(bias);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < out_features; ++j) db[j] += g[r * out_features + j];
                }
              },
              "linear");
}

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, Conv2dGeometry geometry) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  const auto& b = tape.value(bias);
  expect_rank("conv2d", x.shape(), 4, "input");
  expect_rank("conv2d", w.shape(), 4, "weight");
  expect_rank("conv2d", b.shape(), 1, "bias");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin || w.dim(3) != k || b.dim(0) != cout) {
    shape_error("conv2d", "input " + shape_string(x.shape()) + ", weight " + shape_string(w.shape()) +
                              ", bias " + shape_string(b.shape()));
  }
  const std::size_t oh = conv2d_output_extent(h, k, geometry);
  const std::size_t ow = conv2d_output_extent(wd, k, geometry);
  if (oh == 0 || ow == 0) shape_error("conv2d", "kernel larger than padded input");

  const PatchGrid grid{batch, cin, h, wd, k, oh, ow, geometry.stride, geometry.padding};
  auto cols = std::make_shared<std::vector<T>>(grid.rows() * grid.cols());
  im2col(x.data(), grid, cols->data());

  std::vector<T> rows_out(grid.rows() * cout);
  {
    ConstMatrixMap<T> cm(cols->data(), grid.rows(), grid.cols());
    ConstMatrixMap<T> wm(w.data(), cout, grid.cols());
    MatrixMap<T> ym(rows_out.data(), grid.rows(), cout);
    ym.noalias() = cm * wm.transpose();
  }
  Tensor<T> out({batch, cout, oh, ow});
  rows_to_nchw(rows_out.data(), batch, cout, oh * ow, out.data());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < cout; ++c) {
      T* plane = out.data() + (n * cout + c) * oh * ow;
      for (std::size_t p = 0; p < oh * ow; ++p) plane[p] += b[c];
    }
  if (!tape.grad_enabled()) cols.reset();

  return emit(tape, std::move(out), {input, weight, bias},
              [input, weight, bias, grid, cout, cols](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const std::size_t plane = grid.out_h * grid.out_w;
                std::vector<T> grow(grid.rows() * cout);
                nchw_to_rows(g.data(), grid.batch, cout, plane, grow.data());
                ConstMatrixMap<T> gm(grow.data(), grid.rows(), cout);
                if (t.requires_grad(weight)) {
                  ConstMatrixMap<T> cm(cols->data(), grid.rows(), grid.cols());
                  MatrixMap<T> dw(grads.slot(weight).data(), cout, grid.cols());
                  dw.noalias() += gm.transpose() * cm;
                }
                if (t.requires_grad(bias)) {
                  auto& db = grads.slot(bias);
                  for (std::size_t r = 0; r < grid.rows(); ++r)
                    for (std::size_t c = 0; c < cout; ++c) db[c] += grow[r * cout + c];
                }
                if (t.requires_grad(input)) {
                  std::vector<T> dcols(grid.rows() * grid.cols());
                  ConstMatrixMap<T> wm(t.value(weight).data(), cout, grid.cols());
                  MatrixMap<T> dc(dcols.data(), grid.rows(), grid.cols());
                  dc.noalias() = gm * wm;
                  col2im(dcols.data(), grid, grads.slot(input).data());
                }
              },
              "conv2d");
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var input, Var weight, Var bias, Conv2dGeometry geometry) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  const auto& b = tape.value(bias);
  expect_rank("conv_transpose2d", x.shape(), 4, "input");
  expect_rank("conv_transpose2d", w.shape(), 4, "weight");
  expect_rank("conv_transpose2d", b.shape(), 1, "bias");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(1), k = w.dim(2);
  if (w.dim(0) != cin || w.dim(3) != k || b.dim(0) != cout) {
    shape_error("conv_transpose2d", "input " + shape_string(x.shape()) + ", weight " +
                                        shape_string(w.shape()) + ", bias " + shape_string(b.shape()));
  }
  if (geometry.output_padding >= geometry.stride) {
    shape_error("conv_transpose2d", "output_padding must be smaller than stride");
  }
  const std::size_t oh = conv_transpose2d_output_extent(h, k, geometry);
  const std::size_t ow = conv_transpose2d_output_extent(wd, k, geometry);
  if (oh == 0 || ow == 0) shape_error("conv_transpose2d", "non-positive output extent");

  // The output grid plays the role of a convolution input whose patch grid is
  // this op's input grid.
  const PatchGrid grid{batch, cout, oh, ow, k, h, wd, geometry.stride, geometry.padding};
  const std::size_t plane = h * wd;
  auto xrows = std::make_shared<std::vector<T>>(batch * plane * cin);
  nchw_to_rows(x.data(), batch, cin, plane, xrows->data());

  std::vector<T> cols(grid.rows() * grid.cols());
  {
    ConstMatrixMap<T> xm(xrows->data(), grid.rows(), cin);
    ConstMatrixMap<T> wm(w.data(), cin, grid.cols());
    MatrixMap<T> cm(cols.data(), grid.rows(), grid.cols());
    cm.noalias() = xm * wm;
  }
  Tensor<T> out({batch, cout, oh, ow});
  col2im(cols.data(), grid, out.data());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < cout; ++c) {
      T* op = out.data() + (n * cout + c) * oh * ow;
      for (std::size_t p = 0; p < oh * ow; ++p) op[p] += b[c];
    }
  if (!tape.grad_enabled()) xrows.reset();

  return emit(tape, std::move(out), {input, weight, bias},
              [input, weight, bias, grid, cin, xrows](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const std::size_t cout = grid.channels;
                std::vector<T> gcols(grid.rows() * grid.cols());
                im2col(g.data(), grid, gcols.data());
                ConstMatrixMap<T> gm(gcols.data(), grid.rows(), grid.cols());
                if (t.requires_grad(weight)) {
                  ConstMatrixMap<T> xm(xrows->data(), grid.rows(), cin);
                  MatrixMap<T> dw(grads.slot(weight).data(), cin, grid.cols());
                  dw.noalias() += xm.transpose() * gm;
                }
                if (t.requires_grad(bias)) {
                  auto& db = grads.slot(bias);
                  const std::size_t out_plane = grid.in_h * grid.in_w;
                  for (std::size_t n = 0; n < grid.batch; ++n)
                    for (std::size_t c = 0; c < cout; ++c) {
                      const T* gp = g.data() + (n * cout + c) * out_plane;
                      double acc = 0.0;
                      for (std::size_t p = 0; p < out_plane; ++p) acc += gp[p];
                      db[c] += static_cast<T>(acc);
                    }
                }
                if (t.requires_grad(input)) {
                  std::vector<T> dx(grid.rows() * cin);
                  ConstMatrixMap<T> wm(t.value(weight).data(), cin, grid.cols());
                  MatrixMap<T> dxm(dx.data(), grid.rows(), cin);
                  dxm.noalias() = gm * wm.transpose();
                  Tensor<T> dnchw({grid.batch, cin, grid.out_h, grid.out_w});
                  rows_to_nchw(dx.data(), grid.batch, cin, grid.out_h * grid.out_w, dnchw.data());
                  add_scaled(grads.slot(input), dnchw, T{1});
                }
              },
              "conv_transpose2d");
}

template <typename T>
Var batchnorm2d(Tape<T>& tape, Var input, Var gamma, Var beta, Tensor<T>& running_mean, Tensor<T>& running_var,
                BatchNormOptions options) {
  const auto& x = tape.value(input);
  const auto& gm = tape.value(gamma);
  const auto& bt = tape.value(beta);
  expect_rank("batchnorm2d", x.shape(), 4, "input");
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Shape per_channel{channels};
  if (gm.shape() != per_channel || bt.shape() != per_channel || running_mean.shape() != per_channel ||
      running_var.shape() != per_channel) {
    shape_error("batchnorm2d", "per-channel parameters must have shape " + shape_string(per_channel));
  }
  const std::size_t count = batch * plane;
  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  Tensor<T> out(x.shape());
  const bool train = options.mode == Mode::Train;

  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (train) {
      double acc = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mean = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = x.data() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - options.momentum) * running_mean[c] + options.momentum * mean);
      running_var[c] = static_cast<T>((1.0 - options.momentum) * running_var[c] + options.momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    const T m = static_cast<T>(mean);
    (*inv_std)[c] = istd;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = (x[off + i] - m) * istd;
        (*xhat)[off + i] = xh;
        out[off + i] = gm[c] * xh + bt[c];
      }
    }
  }
  if (!tape.grad_enabled()) xhat.reset();

  return emit(tape, std::move(out), {input, gamma, beta},
              [input, gamma, beta, batch, channels, plane, count, train, xhat, inv_std](
                  const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const auto& gmv = t.value(gamma);
                for (std::size_t c = 0; c < channels; ++c) {
                  double sum_g = 0.0, sum_gx = 0.0;
                  for (std::size_t n = 0; n < batch; ++n) {
                    const std::size_t off = (n * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                      sum_g += g[off + i];
                      sum_gx += static_cast<double>(g[off + i]) * (*xhat)[off + i];
                    }
                  }
                  if (t.requires_grad(gamma)) grads.slot(gamma)[c] += static_cast<T>(sum_gx);
                  if (t.requires_grad(beta)) grads.slot(beta)[c] += static_cast<T>(sum_g);
                  if (!t.requires_grad(input)) continue;
                  auto& dx = grads.slot(input);
                  const T scale_c = gmv[c] * (*inv_std)[c];
                  if (train) {
                    const T mean_g = static_cast<T>(sum_g / static_cast<double>(count));
                    const T mean_gx = static_cast<T>(sum_gx / static_cast<double>(count));
                    for (std::size_t n = 0; n < batch; ++n) {
                      const std::size_t off = (n * channels + c) * plane;
                      for (std::size_t i = 0; i < plane; ++i) {
                        dx[off + i] += scale_c * (g[off + i] - mean_g - (*xhat)[off + i] * mean_gx);
                      }
                    }
                  } else {
                    for (std::size_t n = 0; n < batch; ++n) {
                      const std::size_t off = (n * channels + c) * plane;
                      for (std::size_t i = 0; i < plane; ++i) dx[off + i] += scale_c * g[off + i];
                    }
                  }
                }
              },
              "batchnorm2d");
}

template <typename T>
Var relu(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > T{0} ? av[i] : T{0};
  if (tape.tracks_kinks()) {
    tape.fold_kink(pattern_hash(av.size(), [&](std::size_t i) { return av[i] > T{0}; }));
  }
  return emit(tape, std::move(out), {a},
              [a](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const auto& x = t.value(a);
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) {
                  if (x[i] > T{0}) slot[i] += g[i];
                }
              },
              "relu");
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = av[i];
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return emit(tape, std::move(out), {a},
              [a, saved](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) {
                  const T y = (*saved)[i];
                  slot[i] += g[i] * y * (T{1} - y);
                }
              },
              "sigmoid");
}

template <typename T>
Var dropout(Tape<T>& tape, Var a, double p, Rng& rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::InvalidProbability, "dropout probability must be in [0,1)");
  if (mode == Mode::Eval || p == 0.0) return a;
  const auto& av = tape.value(a);
  auto mask = std::make_shared<std::vector<T>>(av.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T{0} : keep_scale;
    out[i] = av[i] * (*mask)[i];
  }
  return emit(tape, std::move(out), {a},
              [a, mask](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(a);
                for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i] * (*mask)[i];
              },
              "dropout");
}

template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var logvar, const Tensor<T>& eps) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  if (m.shape() != lv.shape() || m.shape() != eps.shape()) {
    shape_error("reparameterize", "mu, logvar and eps must share a shape");
  }
  auto noise = std::make_shared<Tensor<T>>(eps);
  Tensor<T> out(m.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] + std::exp(lv[i] / T{2}) * eps[i];
  return emit(tape, std::move(out), {mu, logvar},
              [mu, logvar, noise](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                if (t.requires_grad(mu)) add_scaled(grads.slot(mu), g, T{1});
                if (t.requires_grad(logvar)) {
                  const auto& lvv = t.value(logvar);
                  auto& slot = grads.slot(logvar);
                  for (std::size_t i = 0; i < slot.size(); ++i) {
                    slot[i] += g[i] * (*noise)[i] * std::exp(lvv[i] / T{2}) / T{2};
                  }
                }
              },
              "reparameterize");
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const std::uint8_t> labels) {
  const auto& z = tape.value(logits);
  expect_rank("softmax_cross_entropy", z.shape(), 2, "logits");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch) shape_error("softmax_cross_entropy", "label count does not match batch");
  auto probs = std::make_shared<Tensor<T>>(z.shape());
  auto targets = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] >= classes) {
      fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[r]) + " >= " + std::to_string(classes));
    }
    const T* row = z.data() + r * classes;
    const T peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - peak));
    const double log_denom = std::log(denom);
    total += log_denom - static_cast<double>(row[labels[r]] - peak);
    for (std::size_t c = 0; c < classes; ++c) {
      (*probs)[r * classes + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - peak) - log_denom));
    }
  }
  const T loss = static_cast<T>(total / static_cast<double>(batch));
  return emit(tape, Tensor<T>::scalar(loss), {logits},
              [logits, probs, targets, batch, classes](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(logits);
                const T factor = g[0] / static_cast<T>(batch);
                for (std::size_t r = 0; r < batch; ++r)
                  for (std::size_t c = 0; c < classes; ++c) {
                    const T onehot = (*targets)[r] == c ? T{1} : T{0};
                    slot[r * classes + c] += factor * ((*probs)[r * classes + c] - onehot);
                  }
              },
              "softmax_cross_entropy");
}

template <typename T>
Var mse(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.shape() != bv.shape()) shape_error("mse", shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  const std::size_t n = av.size();
  return emit(tape, Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {a, b},
              [a, b, n](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const auto& x = t.value(a);
                const auto& y = t.value(b);
                const T factor = T{2} * g[0] / static_cast<T>(n);
                if (t.requires_grad(a)) {
                  auto& slot = grads.slot(a);
                  for (std::size_t i = 0; i < n; ++i) slot[i] += factor * (x[i] - y[i]);
                }
                if (t.requires_grad(b)) {
                  auto& slot = grads.slot(b);
                  for (std::size_t i = 0; i < n; ++i) slot[i] -= factor * (x[i] - y[i]);
                }
              },
              "mse");
}

template <typename T>
Var gaussian_kld(Tape<T>& tape, Var mu, Var logvar) {
  const auto& m = tape.value(mu);
  const auto& lv = tape.value(logvar);
  expect_rank("gaussian_kld", m.shape(), 2, "mu");
  if (m.shape() != lv.shape()) shape_error("gaussian_kld", "mu and logvar shapes differ");
  const std::size_t batch = m.dim(0);
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double mv = m[i], l = lv[i];
    acc += mv * mv + std::exp(l) - l - 1.0;
  }
  const T loss = static_cast<T>(0.5 * acc / static_cast<double>(batch));
  return emit(tape, Tensor<T>::scalar(loss), {mu, logvar},
              [mu, logvar, batch](const Tape<T>& t, const Tensor<T>& g, Gradients<T>& grads) {
                const T factor = g[0] / static_cast<T>(batch);
                if (t.requires_grad(mu)) {
                  const auto& mv = t.value(mu);
                  auto& slot = grads.slot(mu);
                  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += factor * mv[i];
                }
                if (t.requires_grad(logvar)) {
                  const auto& lvv = t.value(logvar);
                  auto& slot = grads.slot(logvar);
                  for (std::size_t i = 0; i < slot.size(); ++i) {
                    slot[i] += factor * (std::exp(lvv[i]) - T{1}) / T{2};
                  }
                }
              },
              "gaussian_kld");
}

template <typename T>
Var latent_variance(Tape<T>& tape, Var latents) {
  const auto& z = tape.value(latents);
  expect_rank("latent_variance", z.shape(), 2, "latents");
  const std::size_t rows = z.dim(0), dims = z.dim(1);
  auto centered = std::make_shared<Tensor<T>>(z.shape());
  double acc = 0.0;
  for (std::size_t j = 0; j < dims; ++j) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += z[r * dims + j];
    mean /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = z[r * dims + j] - mean;
      (*centered)[r * dims + j] = static_cast<T>(d);
      acc += d * d;
    }
  }
  const T loss = static_cast<T>(acc / static_cast<double>(rows));
  return emit(tape, Tensor<T>::scalar(loss), {latents},
              [latents, centered, rows](const Tape<T>&, const Tensor<T>& g, Gradients<T>& grads) {
                auto& slot = grads.slot(latents);
                const T factor = T{2} * g[0] / static_cast<T>(rows);
                for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += factor * (*centered)[i];
              },
              "latent_variance");
}

#define TRISKELION_INSTANTIATE_OPS(T)                                                                     \
  template Var add<T>(Tape<T>&, Var, Var);                                                                \
  template Var scale<T>(Tape<T>&, Var, T);                                                                \
  template Var sum<T>(Tape<T>&, Var);                                                                     \
  template Var reshape<T>(Tape<T>&, Var, Shape);                                                          \
  template Var slice_columns<T>(Tape<T>&, Var, std::size_t, std::size_t);                                 \
  template Var clamp<T>(Tape<T>&, Var, T, T);                                                             \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                                        \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, Conv2dGeometry);                                        \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, Conv2dGeometry);                              \
  template Var batchnorm2d<T>(Tape<T>&, Var, Var, Var, Tensor<T>&, Tensor<T>&, BatchNormOptions);         \
  template Var relu<T>(Tape<T>&, Var);                                                                    \
  template Var sigmoid<T>(Tape<T>&, Var);                                                                 \
  template Var dropout<T>(Tape<T>&, Var, double, Rng&, Mode);                                             \
  template Var reparameterize<T>(Tape<T>&, Var, Var, const Tensor<T>&);                                   \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const std::uint8_t>);                    \
  template Var mse<T>(Tape<T>&, Var, Var);                                                                \
  template Var gaussian_kld<T>(Tape<T>&, Var, Var);                                                       \
  template Var latent_variance<T>(Tape<T>&, Var);

TRISKELION_INSTANTIATE_OPS(float)
TRISKELION_INSTANTIATE_OPS(double)

}  // namespace triskelion::ops
