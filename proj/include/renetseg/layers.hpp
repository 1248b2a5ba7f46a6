#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <variant>
#include <vector>

#include "renetseg/sparse.hpp"
#include "renetseg/tensor.hpp"

namespace renetseg {

// Differentiable primitives. Every forward returns its output together with
// the record that its backward consumes. Feature maps are (h, w, c).
// Reductions accumulate in double regardless of T.

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// floor((in + 2 * padding - kernel) / stride) + 1; throws when < 1.
  std::size_t out_extent(std::size_t in, std::size_t kernel) const;
};

enum class Activation { relu, tanh, sigmoid };

template <typename T>
struct ConvRecord {
  ConvSpec spec;
  BasicTensor<T> input;
  BasicTensor<T> weights;
  Shape output_shape;
};

template <typename T>
struct PoolRecord {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

template <typename T>
struct ActivationRecord {
  Activation kind;
  BasicTensor<T> output;
};

template <typename T>
struct DenseRecord {
  BasicTensor<T> input;
  BasicTensor<T> weights;
};

template <typename T>
struct TconvRecord {
  std::shared_ptr<const SparseMatrix<T>> matrix;
  BasicTensor<T> input;
  Shape output_shape;
};

template <typename T>
struct CropRecord {
  Shape input_shape;
  std::size_t top = 0, left = 0;
  Shape output_shape;
};

template <typename T>
struct BceRecord {
  BasicTensor<T> clamped;  // p clamped to [eps, 1 - eps]
  BasicTensor<T> pred;
  BasicTensor<T> target;
};

template <typename T>
using OpRecord = std::variant<ConvRecord<T>, PoolRecord<T>, ActivationRecord<T>,
                              DenseRecord<T>, TconvRecord<T>, CropRecord<T>, BceRecord<T>>;

/// Gradient w.r.t. the op input plus its parameters in declaration order
/// (weights, then bias) for parameterised ops.
template <typename T>
struct Gradients {
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> params;
};

inline constexpr double kBceEpsilon = 1e-7;

// weights: k_h x k_w x c_in x c_out; bias: c_out. Cross-correlation.
template <typename T>
std::pair<BasicTensor<T>, ConvRecord<T>> conv2d_forward(const BasicTensor<T>& input,
                                                        const BasicTensor<T>& weights,
                                                        const BasicTensor<T>& bias,
                                                        const ConvSpec& spec);
template <typename T>
Gradients<T> conv2d_backward(const ConvRecord<T>& record, const BasicTensor<T>& upstream);

/// Disjoint 2x2 windows; ties go to the first cell in row-major order.
template <typename T>
std::pair<BasicTensor<T>, PoolRecord<T>> maxpool2x2_forward(const BasicTensor<T>& input);
template <typename T>
Gradients<T> maxpool2x2_backward(const PoolRecord<T>& record, const BasicTensor<T>& upstream);

template <typename T>
std::pair<BasicTensor<T>, ActivationRecord<T>> activation_forward(const BasicTensor<T>& input,
                                                                  Activation kind);
template <typename T>
Gradients<T> activation_backward(const ActivationRecord<T>& record,
                                 const BasicTensor<T>& upstream);

// output = input^T * weights + bias, with input [p], weights [p, q], bias [q].
template <typename T>
std::pair<BasicTensor<T>, DenseRecord<T>> dense_forward(const BasicTensor<T>& input,
                                                        const BasicTensor<T>& weights,
                                                        const BasicTensor<T>& bias);
template <typename T>
Gradients<T> dense_backward(const DenseRecord<T>& record, const BasicTensor<T>& upstream);

/// Fractionally strided convolution as reshape(matrix * flatten(input)) + bias.
/// Returns the raw (out_h, out_w, c_out) map. Parameter gradients are the
/// kernel (k_h x k_w x c_in x c_out) and the bias, obtained through the
/// matrix transpose.
template <typename T>
std::pair<BasicTensor<T>, TconvRecord<T>> tconv_forward(
    const BasicTensor<T>& input, std::shared_ptr<const SparseMatrix<T>> matrix,
    const BasicTensor<T>& bias);
template <typename T>
Gradients<T> tconv_backward(const TconvRecord<T>& record, const BasicTensor<T>& upstream);

/// Spatial crop of an (h, w, c) map to (out_h, out_w, c) starting at (top, left).
template <typename T>
std::pair<BasicTensor<T>, CropRecord<T>> crop_forward(const BasicTensor<T>& input,
                                                      std::size_t top, std::size_t left,
                                                      std::size_t out_h, std::size_t out_w);
template <typename T>
Gradients<T> crop_backward(const CropRecord<T>& record, const BasicTensor<T>& upstream);

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7].
template <typename T>
std::pair<double, BceRecord<T>> bce_loss(const BasicTensor<T>& pred,
                                         const BasicTensor<T>& target);
/// Gradient w.r.t. the predictions; `upstream` scales d(loss).
template <typename T>
Gradients<T> bce_backward(const BceRecord<T>& record, double upstream = 1.0);

/// Dispatches on the record kind. For BCE, upstream must hold one element.
template <typename T>
Gradients<T> backward(const OpRecord<T>& record, const BasicTensor<T>& upstream);

}  // namespace renetseg
