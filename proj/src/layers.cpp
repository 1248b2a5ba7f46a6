#include "renetseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace renetseg {

namespace {

template <typename T>
BasicTensor<T> from_accumulator(const Shape& shape, const std::vector<double>& acc) {
  BasicTensor<T> t(shape);
  for (std::size_t i = 0; i < acc.size(); ++i) t[i] = static_cast<T>(acc[i]);
  return t;
}

template <typename T>
void require_upstream(const BasicTensor<T>& upstream, const Shape& expected, const char* op) {
  if (upstream.shape() != expected) {
    fail(Errc::shape_mismatch, std::string(op) + " backward: upstream shape " +
                                   shape_string(upstream.shape()) + " != recorded output " +
                                   shape_string(expected));
  }
}

}  // namespace

std::size_t ConvSpec::out_extent(std::size_t in, std::size_t kernel) const {
  if (stride == 0) fail(Errc::invalid_argument, "convolution stride must be >= 1");
  if (in + 2 * padding < kernel) {
    fail(Errc::shape_mismatch, "convolution kernel larger than padded input");
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

// ---------------------------------------------------------------- conv2d

template <typename T>
std::pair<BasicTensor<T>, ConvRecord<T>> conv2d_forward(const BasicTensor<T>& input,
                                                        const BasicTensor<T>& weights,
                                                        const BasicTensor<T>& bias,
                                                        const ConvSpec& spec) {
  require_rank(input, 3, "conv2d input");
  if (input.dim(2) != spec.in_channels) {
    fail(Errc::shape_mismatch, "conv2d input has " + std::to_string(input.dim(2)) +
                                   " channels, spec expects " +
                                   std::to_string(spec.in_channels));
  }
  require_shape(weights, {spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels},
                "conv2d weights");
  require_shape(bias, {spec.out_channels}, "conv2d bias");

  const std::size_t ih = input.dim(0), iw = input.dim(1);
  const std::size_t oh = spec.out_extent(ih, spec.kernel_h);
  const std::size_t ow = spec.out_extent(iw, spec.kernel_w);
  const std::size_t cin = spec.in_channels, cout = spec.out_channels;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  BasicTensor<T> out({oh, ow, cout});
  std::vector<double> acc(cout);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      for (std::size_t co = 0; co < cout; ++co) acc[co] = bias[co];
      for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) continue;
        for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) continue;
          const T* x = input.raw() + (static_cast<std::size_t>(iy) * iw + ix) * cin;
          const T* w = weights.raw() + (ky * spec.kernel_w + kx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double xv = x[ci];
            if (xv == 0.0) continue;
            const T* wr = w + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) acc[co] += xv * wr[co];
          }
        }
      }
      T* o = out.raw() + (oy * ow + ox) * cout;
      for (std::size_t co = 0; co < cout; ++co) o[co] = static_cast<T>(acc[co]);
    }
  }
  Shape out_shape = out.shape();
  return {std::move(out), ConvRecord<T>{spec, input, weights, std::move(out_shape)}};
}

template <typename T>
Gradients<T> conv2d_backward(const ConvRecord<T>& record, const BasicTensor<T>& upstream) {
  require_upstream(upstream, record.output_shape, "conv2d");
  const ConvSpec& spec = record.spec;
  const BasicTensor<T>& input = record.input;
  const std::size_t ih = input.dim(0), iw = input.dim(1);
  const std::size_t oh = record.output_shape[0], ow = record.output_shape[1];
  const std::size_t cin = spec.in_channels, cout = spec.out_channels;
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  std::vector<double> gx(input.size(), 0.0);
  std::vector<double> gw(record.weights.size(), 0.0);
  std::vector<double> gb(cout, 0.0);
  std::vector<double> g(cout);

  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* up = upstream.raw() + (oy * ow + ox) * cout;
      bool any = false;
      for (std::size_t co = 0; co < cout; ++co) {
        g[co] = up[co];
        gb[co] += g[co];
        any = any || g[co] != 0.0;
      }
      if (!any) continue;
      for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) continue;
        for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) continue;
          const std::size_t xoff = (static_cast<std::size_t>(iy) * iw + ix) * cin;
          const std::size_t woff = (ky * spec.kernel_w + kx) * cin * cout;
          const T* x = input.raw() + xoff;
          const T* w = record.weights.raw() + woff;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* wr = w + ci * cout;
            double dot = 0.0;
            for (std::size_t co = 0; co < cout; ++co) dot += wr[co] * g[co];
            gx[xoff + ci] += dot;
            const double xv = x[ci];
            if (xv == 0.0) continue;
            double* gwr = gw.data() + woff + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) gwr[co] += xv * g[co];
          }
        }
      }
    }
  }
  Gradients<T> grads;
  grads.input = from_accumulator<T>(input.shape(), gx);
  grads.params.push_back(from_accumulator<T>(record.weights.shape(), gw));
  grads.params.push_back(from_accumulator<T>({cout}, gb));
  return grads;
}

// ---------------------------------------------------------------- maxpool

template <typename T>
std::pair<BasicTensor<T>, PoolRecord<T>> maxpool2x2_forward(const BasicTensor<T>& input) {
  require_rank(input, 3, "maxpool input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    fail(Errc::shape_mismatch,
         "maxpool2x2 needs even height and width, got " + shape_string(input.shape()));
  }
  BasicTensor<T> out({h / 2, w / 2, c});
  PoolRecord<T> rec{input.shape(), out.shape(), std::vector<std::uint32_t>(out.size())};
  for (std::size_t oy = 0; oy < h / 2; ++oy) {
    for (std::size_t ox = 0; ox < w / 2; ++ox) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (2 * oy * w + 2 * ox) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (oy * (w / 2) + ox) * c + ch;
        out[o] = input[best];
        rec.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return {std::move(out), std::move(rec)};
}

template <typename T>
Gradients<T> maxpool2x2_backward(const PoolRecord<T>& record, const BasicTensor<T>& upstream) {
  require_upstream(upstream, record.output_shape, "maxpool");
  Gradients<T> grads;
  grads.input = BasicTensor<T>(record.input_shape);
  for (std::size_t o = 0; o < upstream.size(); ++o) grads.input[record.argmax[o]] += upstream[o];
  return grads;
}

// ---------------------------------------------------------------- activations

template <typename T>
std::pair<BasicTensor<T>, ActivationRecord<T>> activation_forward(const BasicTensor<T>& input,
                                                                  Activation kind) {
  BasicTensor<T> out = input;
  switch (kind) {
    case Activation::relu:
      for (T& v : out.data()) v = v > T{0} ? v : T{0};
      break;
    case Activation::tanh:
      for (T& v : out.data()) v = std::tanh(v);
      break;
    case Activation::sigmoid:
      for (T& v : out.data()) {
        v = std::clamp(T{1} / (T{1} + std::exp(-v)), std::numeric_limits<T>::min(),
                       std::nextafter(T{1}, T{0}));
      }
      break;
  }
  return {out, ActivationRecord<T>{kind, out}};
}

template <typename T>
Gradients<T> activation_backward(const ActivationRecord<T>& record,
                                 const BasicTensor<T>& upstream) {
  require_upstream(upstream, record.output.shape(), "activation");
  Gradients<T> grads;
  grads.input = upstream;
  auto g = grads.input.data();
  auto y = record.output.data();
  switch (record.kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = y[i] > T{0} ? g[i] : T{0};
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= T{1} - y[i] * y[i];
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T{1} - y[i]);
      break;
  }
  return grads;
}

// ---------------------------------------------------------------- dense

template <typename T>
std::pair<BasicTensor<T>, DenseRecord<T>> dense_forward(const BasicTensor<T>& input,
                                                        const BasicTensor<T>& weights,
                                                        const BasicTensor<T>& bias) {
  require_rank(input, 1, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t p = input.dim(0), q = weights.dim(1);
  if (weights.dim(0) != p) {
    fail(Errc::shape_mismatch, "dense: input length " + std::to_string(p) +
                                   " vs weight rows " + std::to_string(weights.dim(0)));
  }
  require_shape(bias, {q}, "dense bias");
  std::vector<double> acc(bias.data().begin(), bias.data().end());
  for (std::size_t i = 0; i < p; ++i) {
    const double xv = input[i];
    const T* wr = weights.raw() + i * q;
    for (std::size_t j = 0; j < q; ++j) acc[j] += xv * wr[j];
  }
  return {from_accumulator<T>({q}, acc), DenseRecord<T>{input, weights}};
}

template <typename T>
Gradients<T> dense_backward(const DenseRecord<T>& record, const BasicTensor<T>& upstream) {
  const std::size_t p = record.weights.dim(0), q = record.weights.dim(1);
  require_upstream(upstream, {q}, "dense");
  Gradients<T> grads;
  grads.input = BasicTensor<T>({p});
  BasicTensor<T> gw({p, q});
  for (std::size_t i = 0; i < p; ++i) {
    const T* wr = record.weights.raw() + i * q;
    double dot = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      dot += static_cast<double>(wr[j]) * upstream[j];
      gw[i * q + j] = static_cast<T>(static_cast<double>(record.input[i]) * upstream[j]);
    }
    grads.input[i] = static_cast<T>(dot);
  }
  grads.params.push_back(std::move(gw));
  grads.params.push_back(upstream);
  return grads;
}

// ---------------------------------------------------------------- tconv

template <typename T>
std::pair<BasicTensor<T>, TconvRecord<T>> tconv_forward(
    const BasicTensor<T>& input, std::shared_ptr<const SparseMatrix<T>> matrix,
    const BasicTensor<T>& bias) {
  if (!matrix) fail(Errc::invalid_argument, "tconv_forward: null matrix");
  const TconvGeometry& g = matrix->pattern->geometry;
  if (input.size() != matrix->cols()) {
    fail(Errc::shape_mismatch, "tconv_forward: input of " + std::to_string(input.size()) +
                                   " elements vs matrix with " +
                                   std::to_string(matrix->cols()) + " columns");
  }
  require_shape(input, {g.in_h, g.in_w, g.in_channels}, "tconv_forward input");
  require_shape(bias, {g.out_channels}, "tconv_forward bias");

  BasicTensor<T> out({g.out_h(), g.out_w(), g.out_channels});
  const auto& offsets = matrix->pattern->row_offsets;
  const auto& cols = matrix->pattern->cols;
  const T* x = input.raw();
  const T* v = matrix->values.data();
  for (std::size_t r = 0; r < out.size(); ++r) {
    double acc = bias[r % g.out_channels];
    for (std::uint32_t e = offsets[r]; e < offsets[r + 1]; ++e) acc += v[e] * x[cols[e]];
    out[r] = static_cast<T>(acc);
  }
  Shape out_shape = out.shape();
  return {std::move(out), TconvRecord<T>{std::move(matrix), input, std::move(out_shape)}};
}

template <typename T>
Gradients<T> tconv_backward(const TconvRecord<T>& record, const BasicTensor<T>& upstream) {
  require_upstream(upstream, record.output_shape, "tconv");
  const SparseMatrix<T>& m = *record.matrix;
  const SparsePattern& p = *m.pattern;
  const TconvGeometry& g = p.geometry;

  // input gradient = M^T * upstream; kernel gradient gathers x[col] * g[row]
  // into the kernel element each entry was taken from.
  std::vector<double> gx(m.cols(), 0.0);
  std::vector<double> gw(g.kernel_h * g.kernel_w * g.in_channels * g.out_channels, 0.0);
  std::vector<double> gb(g.out_channels, 0.0);
  const T* x = record.input.raw();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double gr = upstream[r];
    if (gr == 0.0) continue;
    gb[r % g.out_channels] += gr;
    for (std::uint32_t e = p.row_offsets[r]; e < p.row_offsets[r + 1]; ++e) {
      gx[p.cols[e]] += m.values[e] * gr;
      gw[p.kernel_index[e]] += x[p.cols[e]] * gr;
    }
  }
  Gradients<T> grads;
  grads.input = from_accumulator<T>(record.input.shape(), gx);
  grads.params.push_back(
      from_accumulator<T>({g.kernel_h, g.kernel_w, g.in_channels, g.out_channels}, gw));
  grads.params.push_back(from_accumulator<T>({g.out_channels}, gb));
  return grads;
}

// ---------------------------------------------------------------- crop

template <typename T>
std::pair<BasicTensor<T>, CropRecord<T>> crop_forward(const BasicTensor<T>& input,
                                                      std::size_t top, std::size_t left,
                                                      std::size_t out_h, std::size_t out_w) {
  require_rank(input, 3, "crop input");
  const std::size_t w = input.dim(1), c = input.dim(2);
  if (top + out_h > input.dim(0) || left + out_w > w) {
    fail(Errc::shape_mismatch, "crop window exceeds input " + shape_string(input.shape()));
  }
  BasicTensor<T> out({out_h, out_w, c});
  for (std::size_t y = 0; y < out_h; ++y) {
    const T* src = input.raw() + ((top + y) * w + left) * c;
    std::copy(src, src + out_w * c, out.raw() + y * out_w * c);
  }
  Shape out_shape = out.shape();
  return {std::move(out), CropRecord<T>{input.shape(), top, left, std::move(out_shape)}};
}

template <typename T>
Gradients<T> crop_backward(const CropRecord<T>& record, const BasicTensor<T>& upstream) {
  require_upstream(upstream, record.output_shape, "crop");
  Gradients<T> grads;
  grads.input = BasicTensor<T>(record.input_shape);
  const std::size_t w = record.input_shape[1], c = record.input_shape[2];
  const std::size_t oh = record.output_shape[0], ow = record.output_shape[1];
  for (std::size_t y = 0; y < oh; ++y) {
    const T* src = upstream.raw() + y * ow * c;
    std::copy(src, src + ow * c, grads.input.raw() + ((record.top + y) * w + record.left) * c);
  }
  return grads;
}

// ---------------------------------------------------------------- bce

template <typename T>
std::pair<double, BceRecord<T>> bce_loss(const BasicTensor<T>& pred,
                                         const BasicTensor<T>& target) {
  if (pred.shape() != target.shape()) {
    fail(Errc::shape_mismatch, "bce_loss: prediction " + shape_string(pred.shape()) +
                                   " vs target " + shape_string(target.shape()));
  }
  BceRecord<T> rec{pred, pred, target};
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T t = target[i];
    if (t != T{0} && t != T{1}) fail(Errc::invalid_target, "bce_loss: target values must be 0 or 1");
    const double p = std::clamp(static_cast<double>(pred[i]), kBceEpsilon, 1.0 - kBceEpsilon);
    rec.clamped[i] = static_cast<T>(p);
    sum -= t == T{1} ? std::log(p) : std::log(1.0 - p);
  }
  return {sum / static_cast<double>(pred.size()), std::move(rec)};
}

template <typename T>
Gradients<T> bce_backward(const BceRecord<T>& record, double upstream) {
  Gradients<T> grads;
  grads.input = BasicTensor<T>(record.pred.shape());
  const double scale = upstream / static_cast<double>(record.pred.size());
  for (std::size_t i = 0; i < record.pred.size(); ++i) {
    const double p = record.pred[i];
    // Zero slope where the clamp is active.
    if (p < kBceEpsilon || p > 1.0 - kBceEpsilon) continue;
    const double t = record.target[i];
    grads.input[i] = static_cast<T>(scale * (p - t) / (p * (1.0 - p)));
  }
  return grads;
}

template <typename T>
Gradients<T> backward(const OpRecord<T>& record, const BasicTensor<T>& upstream) {
  return std::visit(
      [&](const auto& rec) -> Gradients<T> {
        using R = std::decay_t<decltype(rec)>;
        if constexpr (std::is_same_v<R, ConvRecord<T>>) return conv2d_backward(rec, upstream);
        else if constexpr (std::is_same_v<R, PoolRecord<T>>) return maxpool2x2_backward(rec, upstream);
        else if constexpr (std::is_same_v<R, ActivationRecord<T>>) return activation_backward(rec, upstream);
        else if constexpr (std::is_same_v<R, DenseRecord<T>>) return dense_backward(rec, upstream);
        else if constexpr (std::is_same_v<R, TconvRecord<T>>) return tconv_backward(rec, upstream);
        else if constexpr (std::is_same_v<R, CropRecord<T>>) return crop_backward(rec, upstream);
        else {
          if (upstream.size() != 1) {
            fail(Errc::shape_mismatch, "bce backward: upstream must be a scalar");
          }
          return bce_backward(rec, static_cast<double>(upstream[0]));
        }
      },
      record);
}

#define RENETSEG_INSTANTIATE_LAYERS(T)                                                       \
  template std::pair<BasicTensor<T>, ConvRecord<T>> conv2d_forward(                          \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, const ConvSpec&); \
  template Gradients<T> conv2d_backward(const ConvRecord<T>&, const BasicTensor<T>&);       \
  template std::pair<BasicTensor<T>, PoolRecord<T>> maxpool2x2_forward(const BasicTensor<T>&); \
  template Gradients<T> maxpool2x2_backward(const PoolRecord<T>&, const BasicTensor<T>&);   \
  template std::pair<BasicTensor<T>, ActivationRecord<T>> activation_forward(                \
      const BasicTensor<T>&, Activation);                                                    \
  template Gradients<T> activation_backward(const ActivationRecord<T>&, const BasicTensor<T>&); \
  template std::pair<BasicTensor<T>, DenseRecord<T>> dense_forward(                          \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template Gradients<T> dense_backward(const DenseRecord<T>&, const BasicTensor<T>&);       \
  template std::pair<BasicTensor<T>, TconvRecord<T>> tconv_forward(                          \
      const BasicTensor<T>&, std::shared_ptr<const SparseMatrix<T>>, const BasicTensor<T>&); \
  template Gradients<T> tconv_backward(const TconvRecord<T>&, const BasicTensor<T>&);       \
  template std::pair<BasicTensor<T>, CropRecord<T>> crop_forward(                            \
      const BasicTensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t);            \
  template Gradients<T> crop_backward(const CropRecord<T>&, const BasicTensor<T>&);         \
  template std::pair<double, BceRecord<T>> bce_loss(const BasicTensor<T>&,                   \
                                                    const BasicTensor<T>&);                  \
  template Gradients<T> bce_backward(const BceRecord<T>&, double);                          \
  template Gradients<T> backward(const OpRecord<T>&, const BasicTensor<T>&);

RENETSEG_INSTANTIATE_LAYERS(float)
RENETSEG_INSTANTIATE_LAYERS(double)

#undef RENETSEG_INSTANTIATE_LAYERS

}  // namespace renetseg
