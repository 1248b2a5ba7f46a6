#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "renetseg/gradcheck.hpp"
#include "renetseg/layers.hpp"
#include "renetseg/rng.hpp"
#include "renetseg/sparse.hpp"

using namespace renetseg;

namespace {

template <typename F>
Errc error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return Errc::io;
}

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  for (T& v : t.data()) v = static_cast<T>(lo + (hi - lo) * rng.next_double());
  return t;
}

Tensor iota(const Shape& shape, float start = 1.0f) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = start + static_cast<float>(i);
  return t;
}

// Direct nested-loop cross-correlation with zero padding.
TensorD naive_conv(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t stride,
                   std::size_t pad) {
  const long h = static_cast<long>(x.dim(0)), wd = static_cast<long>(x.dim(1));
  const long kh = static_cast<long>(w.dim(0)), kw = static_cast<long>(w.dim(1));
  const std::size_t cin = w.dim(2), cout = w.dim(3);
  const long s = static_cast<long>(stride), p = static_cast<long>(pad);
  const long oh = (h + 2 * p - kh) / s + 1, ow = (wd + 2 * p - kw) / s + 1;
  TensorD out({static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), cout});
  for (long oy = 0; oy < oh; ++oy)
    for (long ox = 0; ox < ow; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = b[co];
        for (long ky = 0; ky < kh; ++ky)
          for (long kx = 0; kx < kw; ++kx) {
            const long iy = oy * s + ky - p, ix = ox * s + kx - p;
            if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              acc += x.at(iy, ix, ci) *
                     w[((static_cast<std::size_t>(ky) * w.dim(1) + kx) * cin + ci) * cout + co];
            }
          }
        out.at(oy, ox, co) = acc;
      }
  return out;
}

// Scatter-accumulate transposed convolution on a dense output buffer.
TensorD dense_tconv(const TensorD& x, const TensorD& w, const TensorD& b, std::size_t stride) {
  const std::size_t h = x.dim(0), wd = x.dim(1), kh = w.dim(0), kw = w.dim(1);
  const std::size_t cin = w.dim(2), cout = w.dim(3);
  TensorD out({(h - 1) * stride + kh, (wd - 1) * stride + kw, cout});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < wd; ++xx)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx)
            for (std::size_t co = 0; co < cout; ++co) {
              out.at(y * stride + ky, xx * stride + kx, co) +=
                  x.at(y, xx, ci) * w[((ky * kw + kx) * cin + ci) * cout + co];
            }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % cout];
  return out;
}

}  // namespace

TEST(ConvSpec, OutputExtent) {
  const ConvSpec s{1, 1, 3, 3, 2, 1};
  EXPECT_EQ(s.out_extent(7, 3), 4u);
  const ConvSpec t{1, 1, 3, 3, 1, 0};
  EXPECT_EQ(error_code([&] { t.out_extent(2, 3); }), Errc::shape_mismatch);
}

TEST(Conv2d, OnesKernelOverCounting) {
  const Tensor x = iota({3, 3, 1});
  const Tensor w({2, 2, 1, 1}, 1.0f);
  const auto [y, rec] = conv2d_forward(x, w, Tensor({1}), ConvSpec{1, 1, 2, 2, 1, 0});
  EXPECT_EQ(y, Tensor({2, 2, 1}, {12, 16, 24, 28}));
}

TEST(Conv2d, ZeroInputGivesBias) {
  const Tensor b({2}, {0.25f, -1.0f});
  Rng rng(1);
  const auto [y, rec] = conv2d_forward(Tensor({4, 5, 3}), random_tensor<float>({3, 3, 3, 2}, rng),
                                       b, ConvSpec{3, 2, 3, 3, 1, 1});
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], b[i % 2]);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  const Tensor x = random_tensor<float>({5, 4, 1}, rng);
  const auto [y, rec] = conv2d_forward(x, Tensor({1, 1, 1, 1}, 1.0f), Tensor({1}),
                                       ConvSpec{1, 1, 1, 1, 1, 0});
  EXPECT_EQ(y, x);
}

TEST(Conv2d, ShapeErrors) {
  const ConvSpec s{2, 1, 3, 3, 1, 1};
  EXPECT_EQ(error_code([&] { conv2d_forward(Tensor({4, 4, 3}), Tensor({3, 3, 2, 1}), Tensor({1}), s); }),
            Errc::shape_mismatch);
  EXPECT_EQ(error_code([&] { conv2d_forward(Tensor({4, 4, 2}), Tensor({3, 3, 2, 1}), Tensor({2}), s); }),
            Errc::shape_mismatch);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k_h = 1 + rng.next_index(3), k_w = 1 + rng.next_index(3);
    const std::size_t stride = 1 + rng.next_index(2), pad = rng.next_index(2);
    const std::size_t h = k_h + rng.next_index(6), w = k_w + rng.next_index(6);
    const std::size_t cin = 1 + rng.next_index(4), cout = 1 + rng.next_index(4);
    const TensorD x = random_tensor<double>({h, w, cin}, rng);
    const TensorD wt = random_tensor<double>({k_h, k_w, cin, cout}, rng);
    const TensorD b = random_tensor<double>({cout}, rng);
    const TensorD expected = naive_conv(x, wt, b, stride, pad);
    const ConvSpec spec{cin, cout, k_h, k_w, stride, pad};
    const auto [y, rec] = conv2d_forward(tensor_cast<float>(x), tensor_cast<float>(wt),
                                         tensor_cast<float>(b), spec);
    ASSERT_EQ(y.shape(), expected.shape());
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], expected[i], 1e-5) << trial;
  }
}

TEST(MaxPool, WindowMaxima) {
  const auto [y, rec] = maxpool2x2_forward(iota({4, 4, 1}));
  EXPECT_EQ(y, Tensor({2, 2, 1}, {6, 8, 14, 16}));
}

TEST(MaxPool, TiesGoToFirstCell) {
  const auto [y, rec] = maxpool2x2_forward(Tensor({4, 4, 2}, 3.0f));
  for (float v : y.data()) EXPECT_EQ(v, 3.0f);
  // window (wy, wx), channel c starts at flat ((2wy * 4) + 2wx) * 2 + c
  for (std::size_t wy = 0; wy < 2; ++wy)
    for (std::size_t wx = 0; wx < 2; ++wx)
      for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_EQ(rec.argmax[(wy * 2 + wx) * 2 + c], ((2 * wy * 4) + 2 * wx) * 2 + c);
      }
}

TEST(MaxPool, OddDimension) {
  EXPECT_EQ(error_code([] { maxpool2x2_forward(Tensor({3, 4, 1})); }), Errc::shape_mismatch);
}

TEST(MaxPool, BackwardRoutesToArgmaxOnly) {
  Rng rng(4);
  const Tensor x = random_tensor<float>({6, 8, 3}, rng);
  const auto [y, rec] = maxpool2x2_forward(x);
  const Tensor up = random_tensor<float>(y.shape(), rng, 0.5, 1.5);
  const Tensor gx = maxpool2x2_backward(rec, up).input;
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < gx.size(); ++i) nonzero += gx[i] != 0.0f;
  EXPECT_EQ(nonzero, y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_EQ(gx[rec.argmax[i]], up[i]);
    EXPECT_EQ(x[rec.argmax[i]], y[i]);
  }
}

TEST(Activation, FixedPoints) {
  const Tensor x({3}, {-2.0f, 0.0f, 3.0f});
  const Tensor relu = activation_forward(x, Activation::relu).first;
  EXPECT_EQ(relu, Tensor({3}, {0.0f, 0.0f, 3.0f}));
  EXPECT_EQ(activation_forward(x, Activation::sigmoid).first[1], 0.5f);
  EXPECT_EQ(activation_forward(x, Activation::tanh).first[1], 0.0f);
}

TEST(Activation, SigmoidStaysInOpenInterval) {
  const Tensor x({4}, {-30.0f, -5.0f, 5.0f, 30.0f});
  const Tensor y = activation_forward(x, Activation::sigmoid).first;
  for (float v : y.data()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Dense, IdentityAndBias) {
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0f;
  const Tensor x({3}, {1.0f, -2.0f, 4.0f});
  const auto [y, rec] = dense_forward(x, eye, Tensor({3}));
  EXPECT_EQ(y, x);
  const Tensor up({3}, {0.5f, 1.5f, -1.0f});
  EXPECT_EQ(dense_backward(rec, up).input, up);

  const Tensor b({3}, {7.0f, 8.0f, 9.0f});
  EXPECT_EQ(dense_forward(Tensor({3}), eye, b).first, b);
}

TEST(Dense, MatchesDotProductOracle) {
  Rng rng(6);
  const TensorD x = random_tensor<double>({5}, rng), w = random_tensor<double>({5, 3}, rng),
                b = random_tensor<double>({3}, rng);
  const Tensor y =
      dense_forward(tensor_cast<float>(x), tensor_cast<float>(w), tensor_cast<float>(b)).first;
  for (std::size_t j = 0; j < 3; ++j) {
    double acc = b[j];
    for (std::size_t i = 0; i < 5; ++i) acc += x[i] * w[i * 3 + j];
    EXPECT_NEAR(y[j], acc, 1e-6);
  }
}

TEST(Dense, LengthMismatch) {
  EXPECT_EQ(error_code([] { dense_forward(Tensor({4}), Tensor({5, 3}), Tensor({3})); }),
            Errc::shape_mismatch);
}

TEST(SparseTconv, TwoByTwoStrideTwo) {
  Rng rng(8);
  const Tensor w = random_tensor<float>({2, 2, 1, 1}, rng);
  const SparseMatrix<float> m = tconv_sparse_matrix(w, 2, 2, 2);
  EXPECT_EQ(m.rows(), 16u);
  EXPECT_EQ(m.cols(), 4u);
  EXPECT_EQ(m.nnz(), 16u);
  std::vector<std::size_t> per_col(4);
  for (const auto& e : m.entries()) ++per_col[e.col];
  for (std::size_t c : per_col) EXPECT_EQ(c, 4u);
}

TEST(SparseTconv, SingleInputCellIsTheKernel) {
  Rng rng(9);
  const Tensor w = random_tensor<float>({3, 3, 1, 2}, rng);
  const Tensor dense = tconv_sparse_matrix(w, 1, 1, 2).to_dense();
  ASSERT_EQ(dense.shape(), (Shape{18, 1}));
  for (std::size_t i = 0; i < 18; ++i) EXPECT_EQ(dense[i], w[i]);
}

TEST(SparseTconv, ZeroKernelGivesZeroProduct) {
  const auto m = std::make_shared<const SparseMatrix<float>>(
      tconv_sparse_matrix(Tensor({4, 4, 2, 3}), 3, 3, 2));
  for (const auto& e : m->entries()) EXPECT_EQ(e.value, 0.0f);
  Rng rng(10);
  const Tensor y = tconv_forward(random_tensor<float>({3, 3, 2}, rng), m, Tensor({3})).first;
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(SparseTconv, EntriesSortedUniqueInRange) {
  Rng rng(11);
  const SparseMatrix<float> m = tconv_sparse_matrix(random_tensor<float>({4, 4, 2, 3}, rng), 3, 5, 2);
  const auto entries = m.entries();
  EXPECT_EQ(entries.size(), 16u * 2 * 3 * 3 * 5);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    EXPECT_LT(entries[i].row, m.rows());
    EXPECT_LT(entries[i].col, m.cols());
    if (i > 0) {
      EXPECT_TRUE(std::pair(entries[i - 1].row, entries[i - 1].col) <
                  std::pair(entries[i].row, entries[i].col));
    }
  }
}

TEST(SparseTconv, SingleSiteScatter) {
  Rng rng(12);
  const Tensor w = random_tensor<float>({2, 2, 1, 1}, rng);
  const auto m = std::make_shared<const SparseMatrix<float>>(tconv_sparse_matrix(w, 1, 1, 2));
  const Tensor y = tconv_forward(Tensor({1, 1, 1}, 3.0f), m, Tensor({1})).first;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y[i], 3.0f * w[i]);
}

TEST(SparseTconv, NonOverlappingBlocks) {
  Rng rng(13);
  const Tensor x = random_tensor<float>({2, 3, 1}, rng);
  const Tensor w = random_tensor<float>({2, 2, 1, 1}, rng);
  const auto m = std::make_shared<const SparseMatrix<float>>(tconv_sparse_matrix(w, 2, 3, 2));
  const Tensor y = tconv_forward(x, m, Tensor({1})).first;
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) {
          EXPECT_EQ(y.at(2 * i + a, 2 * j + b, 0), x.at(i, j, 0) * w[a * 2 + b]);
        }
}

TEST(SparseTconv, ZeroInputGivesBias) {
  Rng rng(14);
  const auto m = std::make_shared<const SparseMatrix<float>>(
      tconv_sparse_matrix(random_tensor<float>({4, 4, 2, 2}, rng), 2, 2, 2));
  const Tensor b({2}, {0.5f, -0.5f});
  const Tensor y = tconv_forward(Tensor({2, 2, 2}), m, b).first;
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], b[i % 2]);
}

TEST(SparseTconv, MatchesDenseScatterOracle) {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.next_index(4), stride = 1 + rng.next_index(3);
    const std::size_t h = 1 + rng.next_index(5), w = 1 + rng.next_index(5);
    const std::size_t cin = 1 + rng.next_index(3), cout = 1 + rng.next_index(3);
    const TensorD x = random_tensor<double>({h, w, cin}, rng);
    const TensorD wt = random_tensor<double>({k, k, cin, cout}, rng);
    const TensorD b = random_tensor<double>({cout}, rng);
    const TensorD expected = dense_tconv(x, wt, b, stride);
    const auto m = std::make_shared<const SparseMatrix<float>>(
        tconv_sparse_matrix(tensor_cast<float>(wt), h, w, stride));
    EXPECT_EQ(m->nnz(), k * k * h * w * cin * cout);
    const Tensor y = tconv_forward(tensor_cast<float>(x), m, tensor_cast<float>(b)).first;
    ASSERT_EQ(y.shape(), expected.shape());
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], expected[i], 1e-5) << trial;

    // In double precision the two paths agree to rounding.
    const auto md = std::make_shared<const SparseMatrix<double>>(tconv_sparse_matrix(wt, h, w, stride));
    const TensorD yd = tconv_forward(x, md, b).first;
    for (std::size_t i = 0; i < yd.size(); ++i) ASSERT_NEAR(yd[i], expected[i], 1e-6) << trial;
  }
}

TEST(SparseTconv, PatternReuseAcrossWeights) {
  Rng rng(16);
  const Tensor w1 = random_tensor<float>({4, 4, 1, 2}, rng), w2 = random_tensor<float>({4, 4, 1, 2}, rng);
  const auto pattern = tconv_pattern({3, 3, 1, 4, 4, 2, 2});
  EXPECT_EQ(tconv_sparse_matrix(w2, pattern).to_dense(), tconv_sparse_matrix(w2, 3, 3, 2).to_dense());
  EXPECT_NE(tconv_sparse_matrix(w1, pattern).to_dense(), tconv_sparse_matrix(w2, pattern).to_dense());
  EXPECT_EQ(error_code([&] { tconv_sparse_matrix(Tensor({3, 3, 1, 2}), pattern); }),
            Errc::shape_mismatch);
}

TEST(SparseTconv, BackwardUsesTranspose) {
  Rng rng(17);
  const TensorD wt = random_tensor<double>({4, 4, 2, 3}, rng);
  const auto m = std::make_shared<const SparseMatrix<double>>(tconv_sparse_matrix(wt, 2, 3, 2));
  const TensorD x = random_tensor<double>({2, 3, 2}, rng);
  const auto [y, rec] = tconv_forward(x, m, TensorD({3}));
  const TensorD up = random_tensor<double>(y.shape(), rng);
  const TensorD gx = tconv_backward(rec, up).input;
  const TensorD dense = m->to_dense();
  for (std::size_t c = 0; c < m->cols(); ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < m->rows(); ++r) acc += dense[r * m->cols() + c] * up[r];
    EXPECT_NEAR(gx[c], acc, 1e-12);
  }
}

TEST(Crop, ForwardAndBackward) {
  const Tensor x = iota({4, 4, 1});
  const auto [y, rec] = crop_forward(x, 1, 1, 2, 2);
  EXPECT_EQ(y, Tensor({2, 2, 1}, {6, 7, 10, 11}));
  const Tensor gx = crop_backward(rec, Tensor({2, 2, 1}, 1.0f)).input;
  float sum = 0;
  for (float v : gx.data()) sum += v;
  EXPECT_EQ(sum, 4.0f);
  EXPECT_EQ(gx.at(1, 1, 0), 1.0f);
  EXPECT_EQ(gx.at(0, 0, 0), 0.0f);
  EXPECT_EQ(error_code([&] { crop_forward(x, 3, 0, 2, 2); }), Errc::shape_mismatch);
}

TEST(Bce, HalfIsLnTwo) {
  Rng rng(18);
  Tensor t({8});
  for (float& v : t.data()) v = rng.next_double() < 0.5 ? 1.0f : 0.0f;
  EXPECT_NEAR(bce_loss(Tensor({8}, 0.5f), t).first, std::log(2.0), 1e-7);
}

TEST(Bce, PerfectPredictionBoundedByClamp) {
  const Tensor t({4}, {0, 1, 1, 0});
  const double loss = bce_loss(t, t).first;
  EXPECT_GE(loss, 0.0);
  EXPECT_LT(loss, 1e-5);
}

TEST(Bce, SinglePixel) {
  EXPECT_NEAR(bce_loss(Tensor({1}, 0.9f), Tensor({1}, 1.0f)).first, 0.105361, 1e-6);
}

TEST(Bce, Errors) {
  EXPECT_EQ(error_code([] { bce_loss(Tensor({2}), Tensor({3})); }), Errc::shape_mismatch);
  EXPECT_EQ(error_code([] { bce_loss(Tensor({2}), Tensor({2}, 0.5f)); }), Errc::invalid_target);
}

TEST(Bce, NonNegativeEverywhere) {
  Rng rng(19);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor p = random_tensor<float>({16}, rng, 0.0, 1.0);
    Tensor t({16});
    for (float& v : t.data()) v = rng.next_double() < 0.5 ? 1.0f : 0.0f;
    EXPECT_GE(bce_loss(p, t).first, 0.0);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(20);
  const Tensor x = random_tensor<float>({4, 4, 2}, rng);
  const auto conv = conv2d_forward(x, random_tensor<float>({3, 3, 2, 2}, rng), Tensor({2}),
                                   ConvSpec{2, 2, 3, 3, 1, 1});
  const Gradients<float> g = backward(OpRecord<float>(conv.second), Tensor(conv.first.shape()));
  for (float v : g.input.data()) EXPECT_EQ(v, 0.0f);
  for (const auto& p : g.params)
    for (float v : p.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backward, UpstreamShapeChecked) {
  const auto pool = maxpool2x2_forward(Tensor({4, 4, 1}));
  EXPECT_EQ(error_code([&] { maxpool2x2_backward(pool.second, Tensor({4, 4, 1})); }),
            Errc::shape_mismatch);
}

TEST(GradientSuite, EveryLayerWithinTolerance) {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    for (const GradcheckResult& r : run_gradient_suite(seed, 0)) {
      EXPECT_TRUE(r.passed()) << r.name << " seed " << seed << ": " << r.max_rel_error;
      EXPECT_LT(r.max_rel_error, kLayerTolerance) << r.name;
      EXPECT_GT(r.checked, 0u);
    }
  }
}

TEST(GradientSuite, LinearLayersAtTightTolerance) {
  const std::set<std::string> linear{"conv2d_3x3_pad1", "conv2d_2x3_stride2", "maxpool2x2", "relu",
                                     "dense", "tconv_sparse", "crop"};
  std::size_t seen = 0;
  for (const GradcheckResult& r : run_gradient_suite(4, 0)) {
    if (!linear.contains(r.name)) continue;
    ++seen;
    EXPECT_LT(r.max_rel_error, kLinearTolerance) << r.name;
  }
  EXPECT_EQ(seen, linear.size());
}

TEST(FiniteDiff, DetectsAWrongGradient) {
  std::vector<double> x{1.0, 2.0};
  auto loss = [&] { return x[0] * x[0] + 3.0 * x[1]; };
  const std::vector<double> right{2.0, 3.0}, wrong{2.0, 3.3};
  EXPECT_LT(finite_diff_check(loss, x, right), 1e-9);
  EXPECT_GT(finite_diff_check(loss, x, wrong), 0.05);
  EXPECT_EQ(x, (std::vector<double>{1.0, 2.0}));
}

TEST(FiniteDiff, RelativeErrorFloor) {
  EXPECT_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}
