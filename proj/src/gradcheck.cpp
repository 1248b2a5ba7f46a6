#include "renetseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>

#include "renetseg/layers.hpp"
#include "renetseg/model.hpp"
#include "renetseg/renet.hpp"
#include "renetseg/rng.hpp"

namespace renetseg {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double finite_diff_check(const std::function<double()>& loss, std::span<double> x,
                         std::span<const double> analytic, double h,
                         std::span<const std::size_t> indices) {
  if (analytic.size() != x.size()) {
    fail(Errc::shape_mismatch, "finite_diff_check: analytic gradient length differs from x");
  }
  double worst = 0.0;
  auto probe = [&](std::size_t i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double plus = loss();
    x[i] = saved - h;
    const double minus = loss();
    x[i] = saved;
    worst = std::max(worst, relative_error((plus - minus) / (2.0 * h), analytic[i]));
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) probe(i);
  } else {
    for (std::size_t i : indices) probe(i);
  }
  return worst;
}

namespace {

TensorD uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  TensorD t(shape);
  for (double& v : t.data()) v = lo + (hi - lo) * rng.next_double();
  return t;
}

// Values bounded away from zero, for the relu kink.
TensorD away_from_zero(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  for (double& v : t.data()) {
    const double mag = 0.05 + 0.95 * rng.next_double();
    v = rng.next_double() < 0.5 ? -mag : mag;
  }
  return t;
}

// Shuffled ladder of distinct values: no 2x2 window holds a near tie.
TensorD distinct(const Shape& shape, Rng& rng) {
  TensorD t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(i) - 0.5;
  for (std::size_t i = t.size() - 1; i > 0; --i) std::swap(t[i], t[rng.next_index(i + 1)]);
  return t;
}

double project(const TensorD& out, const TensorD& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
  return s;
}

/// Checks an op whose output is projected onto fixed random weights.
/// `run` evaluates the op; `grads` maps the projection weights (the
/// upstream gradient) onto analytic gradients, one per leaf.
GradcheckResult check_projected(const std::string& name, double tolerance,
                                std::vector<TensorD*> leaves,
                                const std::function<TensorD()>& run,
                                const std::function<std::vector<TensorD>(const TensorD&)>& grads,
                                Rng& rng) {
  const TensorD probe_out = run();
  const TensorD upstream = uniform(probe_out.shape(), rng, -1.0, 1.0);
  const std::vector<TensorD> analytic = grads(upstream);
  GradcheckResult result{name, 0.0, tolerance, 0};
  auto loss = [&] { return project(run(), upstream); };
  const double h = kFiniteDiffStep;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    std::span<double> x = leaves[k]->data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      auto central = [&](double step) {
        x[i] = saved + step;
        const double plus = loss();
        x[i] = saved - step;
        const double minus = loss();
        x[i] = saved;
        return (plus - minus) / (2.0 * step);
      };
      const double fd = central(h);
      const double a = analytic[k][i];
      // Truncation error of the h stencil, estimated from the 2h stencil.
      const double truncation = std::abs(central(2.0 * h) - fd) / 3.0;
      if (truncation > 0.25 * tolerance * std::max({std::abs(fd), std::abs(a), 1e-8})) {
        ++result.skipped;
        continue;
      }
      result.max_rel_error = std::max(result.max_rel_error, relative_error(fd, a));
      ++result.checked;
    }
  }
  if (result.skipped * 10 > result.checked + result.skipped) {
    result.max_rel_error = std::numeric_limits<double>::infinity();
  }
  return result;
}

std::vector<TensorD> with_input(Gradients<double> g) {
  std::vector<TensorD> out{std::move(g.input)};
  for (auto& p : g.params) out.push_back(std::move(p));
  return out;
}

GradcheckResult check_conv(Rng& rng, const ConvSpec& spec, std::size_t h, std::size_t w,
                           const std::string& name) {
  TensorD x = uniform({h, w, spec.in_channels}, rng, -1, 1);
  TensorD wt = uniform({spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels}, rng, -1, 1);
  TensorD b = uniform({spec.out_channels}, rng, -1, 1);
  return check_projected(
      name, kLinearTolerance, {&x, &wt, &b},
      [&] { return conv2d_forward(x, wt, b, spec).first; },
      [&](const TensorD& up) {
        return with_input(conv2d_backward(conv2d_forward(x, wt, b, spec).second, up));
      },
      rng);
}

GradcheckResult check_activation(Rng& rng, Activation kind, const std::string& name) {
  TensorD x = kind == Activation::relu ? away_from_zero({4, 5, 3}, rng)
                                       : uniform({4, 5, 3}, rng, -2, 2);
  const double tol = kind == Activation::relu ? kLinearTolerance : kLayerTolerance;
  return check_projected(
      name, tol, {&x}, [&] { return activation_forward(x, kind).first; },
      [&](const TensorD& up) {
        return with_input(activation_backward(activation_forward(x, kind).second, up));
      },
      rng);
}

GradcheckResult check_sweep(Rng& rng, Direction dir) {
  TensorD x = uniform({3, 4, 5}, rng, -1, 1);
  SweepParams<double> p{uniform({5, 6}, rng, -0.5, 0.5), uniform({6, 6}, rng, -0.5, 0.5),
                        uniform({6}, rng, -0.5, 0.5)};
  return check_projected(
      std::string("sweep_") + direction_name(dir), kLayerTolerance,
      {&x, &p.input_weights, &p.recurrent_weights, &p.bias},
      [&] { return directional_sweep(x, dir, p).first.activations; },
      [&](const TensorD& up) {
        SweepGradients<double> g = sweep_backward(directional_sweep(x, dir, p).second, up);
        return std::vector<TensorD>{g.input, g.params.input_weights, g.params.recurrent_weights,
                                    g.params.bias};
      },
      rng);
}

GradcheckResult check_renet_block(Rng& rng) {
  const std::size_t u = 4, c = 3;
  TensorD x = uniform({4, 6, c}, rng, -1, 1);
  RenetParams<double> p;
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t len = d < 2 ? 2 * 2 * c : 2 * u;
    p[d] = {uniform({len, u}, rng, -0.5, 0.5), uniform({u, u}, rng, -0.5, 0.5),
            uniform({u}, rng, -0.5, 0.5)};
  }
  std::vector<TensorD*> leaves{&x};
  for (auto& sp : p) {
    leaves.push_back(&sp.input_weights);
    leaves.push_back(&sp.recurrent_weights);
    leaves.push_back(&sp.bias);
  }
  return check_projected(
      "renet_block", kLayerTolerance, leaves, [&] { return renet_block(x, p, 2, 2).first; },
      [&](const TensorD& up) {
        RenetGradients<double> g = renet_block_backward(renet_block(x, p, 2, 2).second, up);
        std::vector<TensorD> out{g.input};
        for (auto& sp : g.params) {
          out.push_back(sp.input_weights);
          out.push_back(sp.recurrent_weights);
          out.push_back(sp.bias);
        }
        return out;
      },
      rng);
}

// ReLU on/off states and pool winners along the whole forward pass. Central
// differences are only meaningful when this pattern is the same at both
// ends of the stencil.
std::vector<std::uint32_t> kink_pattern(const Network<double>::Trace& trace) {
  std::vector<std::uint32_t> pattern;
  auto add = [&](const std::vector<Network<double>::TapeEntry>& tape) {
    for (const auto& entry : tape) {
      if (const auto* act = std::get_if<ActivationRecord<double>>(&entry.record)) {
        if (act->kind != Activation::relu) continue;
        for (double v : act->output.data()) pattern.push_back(v > 0.0);
      } else if (const auto* pool = std::get_if<PoolRecord<double>>(&entry.record)) {
        pattern.insert(pattern.end(), pool->argmax.begin(), pool->argmax.end());
      }
    }
  };
  add(trace.encoder);
  add(trace.decoder);
  return pattern;
}

}  // namespace

GradcheckResult model_gradient_check(std::uint64_t seed, std::size_t image_size,
                                     std::size_t samples) {
  Rng rng(seed);
  ModelConfig config;
  config.image_size = image_size;
  const ModelParams init = build_model(config, rng);
  // Small nonzero biases.
  std::vector<TensorD> weights;
  for (const auto& p : init.params) {
    TensorD w = tensor_cast<double>(p.value);
    if (p.name.ends_with("bias")) {
      for (double& v : w.data()) v = 0.1 * (rng.next_double() - 0.5);
    }
    weights.push_back(std::move(w));
  }
  const TensorD image = uniform({image_size, image_size, kInputChannels}, rng, 0, 1);
  TensorD mask({image_size, image_size, 1});
  for (double& v : mask.data()) v = rng.next_double() < 0.3 ? 1.0 : 0.0;

  PatternCache cache;
  auto evaluate = [&](std::vector<std::uint32_t>* pattern) {
    Network<double> net(config, weights, image_size, image_size, &cache);
    const auto trace = net.forward(image);
    if (pattern) *pattern = kink_pattern(trace);
    return bce_loss(trace.probabilities, mask).first;
  };
  Network<double> net(config, weights, image_size, image_size, &cache);
  const auto trace = net.forward(image);
  const auto base_pattern = kink_pattern(trace);
  const auto analytic =
      net.backward(trace, bce_backward(bce_loss(trace.probabilities, mask).second).input);

  std::size_t total = 0;
  for (const auto& w : weights) total += w.size();
  GradcheckResult result{"model_end_to_end", 0.0, kModelTolerance, 0};
  const double h = kFiniteDiffStep;
  std::vector<std::uint32_t> plus_pattern, minus_pattern;
  for (std::size_t attempts = 0; result.checked < samples && attempts < 20 * samples; ++attempts) {
    std::size_t i = rng.next_index(total), t = 0;
    while (i >= weights[t].size()) i -= weights[t++].size();
    double& x = weights[t][i];
    const double saved = x;
    x = saved + h;
    const double plus = evaluate(&plus_pattern);
    x = saved - h;
    const double minus = evaluate(&minus_pattern);
    x = saved;
    if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
      ++result.skipped;
      continue;
    }
    result.max_rel_error =
        std::max(result.max_rel_error, relative_error((plus - minus) / (2.0 * h), analytic[t][i]));
    ++result.checked;
  }
  if (result.checked < samples) result.max_rel_error = std::numeric_limits<double>::infinity();
  return result;
}

std::vector<GradcheckResult> run_gradient_suite(std::uint64_t seed, std::size_t model_samples) {
  Rng rng(seed);
  std::vector<GradcheckResult> results;

  results.push_back(check_conv(rng, {2, 3, 3, 3, 1, 1}, 5, 4, "conv2d_3x3_pad1"));
  results.push_back(check_conv(rng, {3, 2, 2, 3, 2, 0}, 6, 7, "conv2d_2x3_stride2"));

  {
    TensorD x = distinct({6, 4, 2}, rng);
    results.push_back(check_projected(
        "maxpool2x2", kLinearTolerance, {&x}, [&] { return maxpool2x2_forward(x).first; },
        [&](const TensorD& up) {
          return with_input(maxpool2x2_backward(maxpool2x2_forward(x).second, up));
        },
        rng));
  }

  results.push_back(check_activation(rng, Activation::relu, "relu"));
  results.push_back(check_activation(rng, Activation::tanh, "tanh"));
  results.push_back(check_activation(rng, Activation::sigmoid, "sigmoid"));

  {
    TensorD x = uniform({5}, rng, -1, 1), w = uniform({5, 3}, rng, -1, 1), b = uniform({3}, rng, -1, 1);
    results.push_back(check_projected(
        "dense", kLinearTolerance, {&x, &w, &b}, [&] { return dense_forward(x, w, b).first; },
        [&](const TensorD& up) { return with_input(dense_backward(dense_forward(x, w, b).second, up)); },
        rng));
  }

  {
    TensorD x = uniform({3, 2, 2}, rng, -1, 1), w = uniform({4, 4, 2, 3}, rng, -1, 1),
            b = uniform({3}, rng, -1, 1);
    auto run = [&] {
      auto m = std::make_shared<const SparseMatrix<double>>(tconv_sparse_matrix(w, 3, 2, 2));
      return tconv_forward(x, m, b);
    };
    results.push_back(check_projected(
        "tconv_sparse", kLinearTolerance, {&x, &w, &b}, [&] { return run().first; },
        [&](const TensorD& up) { return with_input(tconv_backward(run().second, up)); }, rng));
  }

  {
    TensorD x = uniform({6, 6, 2}, rng, -1, 1);
    results.push_back(check_projected(
        "crop", kLinearTolerance, {&x}, [&] { return crop_forward(x, 1, 1, 4, 4).first; },
        [&](const TensorD& up) { return with_input(crop_backward(crop_forward(x, 1, 1, 4, 4).second, up)); },
        rng));
  }

  {
    TensorD p = uniform({4, 4, 1}, rng, 0.1, 0.9);
    TensorD t({4, 4, 1});
    for (double& v : t.data()) v = rng.next_double() < 0.5 ? 1.0 : 0.0;
    const std::vector<double> analytic = [&] {
      const auto g = bce_backward(bce_loss(p, t).second).input;
      return std::vector<double>(g.data().begin(), g.data().end());
    }();
    GradcheckResult r{"bce", 0.0, kLayerTolerance, p.size()};
    r.max_rel_error = finite_diff_check([&] { return bce_loss(p, t).first; }, p.data(), analytic);
    results.push_back(r);
  }

  for (Direction d : {Direction::down, Direction::up, Direction::right, Direction::left}) {
    results.push_back(check_sweep(rng, d));
  }
  results.push_back(check_renet_block(rng));

  if (model_samples > 0) {
    results.push_back(model_gradient_check(rng.next_u64() | 1u, 16, model_samples));
  }
  return results;
}

}  // namespace renetseg
