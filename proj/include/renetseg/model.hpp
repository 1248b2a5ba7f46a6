#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "renetseg/checkpoint.hpp"
#include "renetseg/layers.hpp"
#include "renetseg/renet.hpp"
#include "renetseg/rng.hpp"
#include "renetseg/sparse.hpp"
#include "renetseg/tensor.hpp"

namespace renetseg {

struct ModelConfig {
  std::size_t image_size = 64;
  /// Seven 3x3 convolutions; 2x2 max-pools follow the second and fourth.
  std::vector<std::size_t> encoder_channels{16, 16, 32, 32, 64, 64, 64};
  std::size_t patch = 2;
  std::size_t rnn_units = 32;
  std::size_t renet_blocks = 1;
  /// One stride-2 4x4 transposed convolution per entry; the count must
  /// undo the encoder pools and the patch grid (2^count == 4 * patch).
  std::vector<std::size_t> decoder_channels{32, 16, 8};
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 4;
  std::size_t epochs = 300;
  std::uint64_t seed = 42;
  double threshold = 0.5;

  /// Throws Errc::config describing the first violated rule.
  void validate() const;
  /// Spatial reduction from image to renet grid (4 * patch).
  std::size_t downsampling() const { return 4 * patch; }
  /// Throws Errc::shape_mismatch unless an h x w image can be processed.
  void check_image_dims(std::size_t h, std::size_t w) const;
};

inline constexpr std::size_t kEncoderConvs = 7;
inline constexpr std::size_t kPoolAfter[] = {1, 3};  // conv indices followed by a pool
inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kDecoderKernel = 4;
inline constexpr std::size_t kDecoderStride = 2;

enum class Init { zero, glorot, he };

/// Layers followed by a ReLU use He-uniform draws; for a stride-s tconv the
/// fan_in counts the (k / s)^2 input sites that reach one output pixel.
struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0, fan_out = 0;  // zero for biases
  Init init = Init::zero;
};

/// Every parameter tensor in declaration order.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config);

struct Parameter {
  std::string name;
  Tensor value;
  Tensor velocity;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Parameter> params;

  std::vector<Tensor> values() const;
  const Tensor& value(const std::string& name) const;
  /// Architecture settings travel in a "meta.config" entry.
  Checkpoint to_checkpoint() const;
  static ModelParams from_checkpoint(const Checkpoint& ckpt);
};

/// Glorot-uniform weights drawn from `rng` in declaration order; zero biases.
ModelParams build_model(const ModelConfig& config, Rng& rng);

/// Caches weight-independent transposed-convolution patterns by geometry.
class PatternCache {
 public:
  std::shared_ptr<const SparsePattern> get(const TconvGeometry& geometry);

 private:
  std::vector<std::shared_ptr<const SparsePattern>> patterns_;
};

/// The full network for one input resolution, generic over the scalar type
/// so gradient checks can run in double precision.
template <typename T>
class Network {
 public:
  struct TapeEntry {
    OpRecord<T> record;
    std::optional<std::size_t> param;  // index of the weight; bias follows
  };

  struct Trace {
    std::vector<TapeEntry> encoder;
    std::vector<RenetRecord<T>> renet;
    std::vector<TapeEntry> decoder;
    BasicTensor<T> probabilities;
  };

  Network(ModelConfig config, std::vector<BasicTensor<T>> weights, std::size_t height,
          std::size_t width, PatternCache* cache = nullptr);

  BasicTensor<T> encode(const BasicTensor<T>& image, std::vector<TapeEntry>* tape = nullptr) const;
  BasicTensor<T> renet(const BasicTensor<T>& features,
                       std::vector<RenetRecord<T>>* records = nullptr) const;
  BasicTensor<T> decode(const BasicTensor<T>& renet_out,
                        std::vector<TapeEntry>* tape = nullptr) const;

  Trace forward(const BasicTensor<T>& image) const;
  /// Parameter gradients in declaration order given d(loss)/d(probabilities).
  std::vector<BasicTensor<T>> backward(const Trace& trace,
                                       const BasicTensor<T>& grad_probabilities) const;

  const ModelConfig& config() const { return config_; }
  const std::vector<BasicTensor<T>>& weights() const { return weights_; }

 private:
  std::size_t renet_base(std::size_t block) const;
  std::size_t decoder_base() const;

  ModelConfig config_;
  std::vector<BasicTensor<T>> weights_;
  std::size_t height_, width_;
  std::vector<std::shared_ptr<const SparseMatrix<T>>> decoder_matrices_;
};

Tensor encode(const Tensor& image, const ModelParams& params);
Tensor decode(const Tensor& renet_out, const ModelParams& params);
/// Probability mask (h x w x 1) for an (h x w x 3) image.
Tensor forward(const Tensor& image, const ModelParams& params);

struct Example {
  Tensor image;  // h x w x 3
  Tensor mask;   // h x w x 1, binary
};

struct GradientResult {
  double loss = 0.0;                  // mean BCE over the batch
  std::vector<Tensor> gradients;      // declaration order
  std::vector<Tensor> probabilities;  // per example, from this forward pass
};

GradientResult loss_and_gradients(std::span<const Example* const> batch,
                                  const ModelParams& params, PatternCache* cache = nullptr);
GradientResult loss_and_gradients(std::span<const Example> batch, const ModelParams& params);

/// v <- momentum * v - lr * g; theta <- theta + v, in declaration order.
void sgd_update(ModelParams& params, std::span<const Tensor> gradients, double lr,
                double momentum);

/// 1 where p >= threshold.
Tensor predict_mask(const Tensor& probabilities, double threshold = 0.5);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean over the epoch's minibatches, weighted by size
  double dice = 0.0;      // macro Dice of thresholded predictions made during the epoch
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;

  /// "epoch,loss,dice" header then one line per epoch, six decimals.
  std::string serialize() const;
};

struct TrainResult {
  ModelParams params;
  TrainTrace trace;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds the model from `rng`, then runs config.epochs passes of minibatch
/// SGD; each epoch shuffles with Fisher-Yates drawing from the same rng.
TrainResult train(const ModelConfig& config, std::span<const Example> dataset, Rng& rng,
                  const EpochCallback& on_epoch = {});

}  // namespace renetseg
