#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

/// Geometry of a transposed convolution whose raw output size per axis is
/// (in - 1) * stride + kernel.
struct TconvGeometry {
  std::size_t in_h = 0, in_w = 0, in_channels = 0;
  std::size_t kernel_h = 0, kernel_w = 0, out_channels = 0;
  std::size_t stride = 1;

  std::size_t out_h() const { return (in_h - 1) * stride + kernel_h; }
  std::size_t out_w() const { return (in_w - 1) * stride + kernel_w; }
  std::size_t rows() const { return out_h() * out_w() * out_channels; }
  std::size_t cols() const { return in_h * in_w * in_channels; }

  friend bool operator==(const TconvGeometry&, const TconvGeometry&) = default;
};

/// Weight-independent structure of a transposed-convolution matrix in
/// compressed-row form. Entries of a row are sorted by column;
/// kernel_index[e] is the flat (kh, kw, c_in, c_out) index of the kernel
/// element stored at entry e.
struct SparsePattern {
  TconvGeometry geometry;
  std::vector<std::uint32_t> row_offsets;  // rows + 1
  std::vector<std::uint32_t> cols;
  std::vector<std::uint32_t> kernel_index;

  std::size_t nnz() const { return cols.size(); }
};

std::shared_ptr<const SparsePattern> tconv_pattern(const TconvGeometry& geometry);

/// Matrix mapping a flattened (h, w, c_in) input onto the flattened raw
/// (out_h, out_w, c_out) transposed-convolution output. Non-zero slots hold
/// kernel elements; an all-zero kernel keeps its slots as explicit zeros.
template <typename T>
struct SparseMatrix {
  std::shared_ptr<const SparsePattern> pattern;
  std::vector<T> values;

  std::size_t rows() const { return pattern->geometry.rows(); }
  std::size_t cols() const { return pattern->geometry.cols(); }
  std::size_t nnz() const { return values.size(); }

  struct Entry {
    std::size_t row, col;
    T value;
  };
  /// All entries, sorted by (row, col).
  std::vector<Entry> entries() const;
  /// Dense (rows x cols) copy, for inspection in tests.
  BasicTensor<T> to_dense() const;
};

/// weights: k_h x k_w x c_in x c_out.
template <typename T>
SparseMatrix<T> tconv_sparse_matrix(const BasicTensor<T>& weights, std::size_t in_h,
                                    std::size_t in_w, std::size_t stride);

/// Refills an existing pattern with new kernel values; the pattern geometry
/// must match the weight shape.
template <typename T>
SparseMatrix<T> tconv_sparse_matrix(const BasicTensor<T>& weights,
                                    std::shared_ptr<const SparsePattern> pattern);

}  // namespace renetseg
