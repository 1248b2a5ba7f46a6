#include "renetseg/sparse.hpp"

#include <limits>

namespace renetseg {

namespace {

// Input indices iy with 0 <= oy - iy * stride < kernel, ascending.
std::pair<std::size_t, std::size_t> contributing_range(std::size_t o, std::size_t kernel,
                                                       std::size_t stride, std::size_t in) {
  const std::size_t hi = std::min(o / stride, in - 1);
  const std::size_t lo = o + 1 > kernel ? (o + 1 - kernel + stride - 1) / stride : 0;
  return {lo, hi};
}

}  // namespace

std::shared_ptr<const SparsePattern> tconv_pattern(const TconvGeometry& g) {
  if (g.in_h == 0 || g.in_w == 0 || g.in_channels == 0 || g.kernel_h == 0 ||
      g.kernel_w == 0 || g.out_channels == 0) {
    fail(Errc::invalid_shape, "transposed convolution geometry has a zero extent");
  }
  if (g.stride == 0) fail(Errc::invalid_argument, "transposed convolution stride must be >= 1");
  const std::size_t nnz = g.kernel_h * g.kernel_w * g.out_channels * g.cols();
  if (nnz > std::numeric_limits<std::uint32_t>::max() ||
      g.rows() > std::numeric_limits<std::uint32_t>::max()) {
    fail(Errc::invalid_shape, "transposed convolution matrix too large");
  }

  auto p = std::make_shared<SparsePattern>();
  p->geometry = g;
  p->row_offsets.reserve(g.rows() + 1);
  p->cols.reserve(nnz);
  p->kernel_index.reserve(nnz);
  p->row_offsets.push_back(0);

  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const auto [iy_lo, iy_hi] = contributing_range(oy, g.kernel_h, g.stride, g.in_h);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const auto [ix_lo, ix_hi] = contributing_range(ox, g.kernel_w, g.stride, g.in_w);
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        for (std::size_t iy = iy_lo; iy <= iy_hi; ++iy) {
          const std::size_t ky = oy - iy * g.stride;
          for (std::size_t ix = ix_lo; ix <= ix_hi; ++ix) {
            const std::size_t kx = ox - ix * g.stride;
            const std::size_t col0 = (iy * g.in_w + ix) * g.in_channels;
            const std::size_t k0 = (ky * g.kernel_w + kx) * g.in_channels;
            for (std::size_t ci = 0; ci < g.in_channels; ++ci) {
              p->cols.push_back(static_cast<std::uint32_t>(col0 + ci));
              p->kernel_index.push_back(
                  static_cast<std::uint32_t>((k0 + ci) * g.out_channels + co));
            }
          }
        }
        p->row_offsets.push_back(static_cast<std::uint32_t>(p->cols.size()));
      }
    }
  }
  return p;
}

template <typename T>
std::vector<typename SparseMatrix<T>::Entry> SparseMatrix<T>::entries() const {
  std::vector<Entry> out;
  out.reserve(nnz());
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::uint32_t e = pattern->row_offsets[r]; e < pattern->row_offsets[r + 1]; ++e) {
      out.push_back({r, pattern->cols[e], values[e]});
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> SparseMatrix<T>::to_dense() const {
  BasicTensor<T> dense({rows(), cols()});
  for (const auto& e : entries()) dense[e.row * cols() + e.col] = e.value;
  return dense;
}

template <typename T>
SparseMatrix<T> tconv_sparse_matrix(const BasicTensor<T>& weights,
                                    std::shared_ptr<const SparsePattern> pattern) {
  const TconvGeometry& g = pattern->geometry;
  require_shape(weights, {g.kernel_h, g.kernel_w, g.in_channels, g.out_channels},
                "tconv_sparse_matrix weights");
  SparseMatrix<T> m;
  m.values.resize(pattern->nnz());
  const T* w = weights.raw();
  for (std::size_t e = 0; e < m.values.size(); ++e) m.values[e] = w[pattern->kernel_index[e]];
  m.pattern = std::move(pattern);
  return m;
}

template <typename T>
SparseMatrix<T> tconv_sparse_matrix(const BasicTensor<T>& weights, std::size_t in_h,
                                    std::size_t in_w, std::size_t stride) {
  require_rank(weights, 4, "tconv_sparse_matrix weights");
  TconvGeometry g{in_h, in_w, weights.dim(2), weights.dim(0), weights.dim(1), weights.dim(3),
                  stride};
  return tconv_sparse_matrix(weights, tconv_pattern(g));
}

template struct SparseMatrix<float>;
template struct SparseMatrix<double>;
template SparseMatrix<float> tconv_sparse_matrix(const Tensor&, std::size_t, std::size_t,
                                                 std::size_t);
template SparseMatrix<double> tconv_sparse_matrix(const TensorD&, std::size_t, std::size_t,
                                                  std::size_t);
template SparseMatrix<float> tconv_sparse_matrix(const Tensor&,
                                                 std::shared_ptr<const SparsePattern>);
template SparseMatrix<double> tconv_sparse_matrix(const TensorD&,
                                                  std::shared_ptr<const SparsePattern>);

}  // namespace renetseg
