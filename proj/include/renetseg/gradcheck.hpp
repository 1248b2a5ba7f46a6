#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace renetseg {

inline constexpr double kFiniteDiffStep = 1e-3;
inline constexpr double kLinearTolerance = 1e-6;
inline constexpr double kLayerTolerance = 1e-4;
inline constexpr double kModelTolerance = 1e-3;

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Perturbs x[i] by +-h for every i in `indices` (all of x when empty),
/// evaluates `loss` at each point and compares the central difference with
/// analytic[i]. x is restored afterwards. Returns the max relative error.
double finite_diff_check(const std::function<double()>& loss, std::span<double> x,
                         std::span<const double> analytic, double h = kFiniteDiffStep,
                         std::span<const std::size_t> indices = {});

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;  // scalars perturbed
  std::size_t skipped = 0;  // samples the h stencil cannot resolve

  bool passed() const { return max_rel_error < tolerance; }
};

/// Every layer kind on small random double-precision problems, then the
/// assembled model on a 16x16 input with `model_samples` sampled parameters.
/// A layer scalar is skipped when the h stencil's truncation error, estimated
/// against a 2h stencil, is too large to resolve the tolerance; skipping more
/// than a tenth of the scalars fails the layer.
std::vector<GradcheckResult> run_gradient_suite(std::uint64_t seed,
                                                std::size_t model_samples = 200);

/// End-to-end check of the model at the given image size. Samples whose
/// +-h stencil flips a ReLU or changes a pool winner are redrawn.
GradcheckResult model_gradient_check(std::uint64_t seed, std::size_t image_size,
                                     std::size_t samples);

}  // namespace renetseg
