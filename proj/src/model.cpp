#include "renetseg/model.hpp"

#include <cstdio>
#include <numeric>

#include "renetseg/metrics.hpp"

namespace renetseg {

namespace {

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::size_t renet_input_length(const ModelConfig& c, std::size_t block) {
  return block == 0 ? c.patch * c.patch * c.encoder_channels.back() : 2 * c.rnn_units;
}

template <typename T>
void accumulate(BasicTensor<T>& into, const BasicTensor<T>& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(Errc::config, what); };
  if (image_size == 0 || image_size % 8 != 0) {
    bad("image_size " + std::to_string(image_size) + " is not divisible by 8");
  }
  if (encoder_channels.size() != kEncoderConvs) bad("encoder needs exactly 7 convolution widths");
  for (std::size_t c : encoder_channels) {
    if (c == 0) bad("encoder channel widths must be positive");
  }
  if (!is_power_of_two(patch)) bad("patch must be a positive power of two");
  if (image_size % downsampling() != 0) {
    bad("image_size " + std::to_string(image_size) + " is not divisible by 4 * patch");
  }
  if (decoder_channels.empty() || (std::size_t{1} << decoder_channels.size()) != downsampling()) {
    bad("decoder needs log2(4 * patch) upsampling stages");
  }
  for (std::size_t c : decoder_channels) {
    if (c == 0) bad("decoder channel widths must be positive");
  }
  if (rnn_units == 0) bad("rnn_units must be positive");
  if (renet_blocks == 0) bad("renet_blocks must be positive");
  if (batch_size == 0) bad("batch_size must be positive");
  if (!(learning_rate > 0.0)) bad("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (!(threshold >= 0.0 && threshold <= 1.0)) bad("threshold must lie in [0, 1]");
  if (seed == 0) bad("seed must be nonzero");
}

void ModelConfig::check_image_dims(std::size_t h, std::size_t w) const {
  const std::size_t d = downsampling();
  if (h == 0 || w == 0 || h % d != 0 || w % d != 0 || h % 8 != 0 || w % 8 != 0) {
    fail(Errc::shape_mismatch, "image of " + std::to_string(h) + "x" + std::to_string(w) +
                                   " is not divisible by " + std::to_string(std::max<std::size_t>(d, 8)));
  }
}

// ---------------------------------------------------------------- params

std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  std::vector<ParamSpec> layout;
  std::size_t in = kInputChannels;
  for (std::size_t l = 0; l < kEncoderConvs; ++l) {
    const std::size_t out = c.encoder_channels[l];
    const std::string prefix = "encoder.conv" + std::to_string(l + 1);
    layout.push_back({prefix + ".weight", {3, 3, in, out}, 9 * in, 9 * out, Init::he});
    layout.push_back({prefix + ".bias", {out}, 0, 0});
    in = out;
  }
  const std::size_t u = c.rnn_units;
  for (std::size_t b = 0; b < c.renet_blocks; ++b) {
    for (Direction d : {Direction::down, Direction::up, Direction::right, Direction::left}) {
      const std::size_t p = is_vertical(d) ? renet_input_length(c, b) : 2 * u;
      const std::string prefix = "renet" + std::to_string(b) + "." + direction_name(d);
      layout.push_back({prefix + ".input_weights", {p, u}, p, u, Init::glorot});
      layout.push_back({prefix + ".recurrent_weights", {u, u}, u, u, Init::glorot});
      layout.push_back({prefix + ".bias", {u}, 0, 0});
    }
  }
  in = 2 * u;
  const std::size_t k = kDecoderKernel, sites = (k / kDecoderStride) * (k / kDecoderStride);
  for (std::size_t s = 0; s < c.decoder_channels.size(); ++s) {
    const std::size_t out = c.decoder_channels[s];
    const std::string prefix = "decoder.tconv" + std::to_string(s + 1);
    layout.push_back({prefix + ".weight", {k, k, in, out}, sites * in, k * k * out, Init::he});
    layout.push_back({prefix + ".bias", {out}, 0, 0});
    in = out;
  }
  layout.push_back({"decoder.head.weight", {1, 1, in, 1}, in, 1, Init::glorot});
  layout.push_back({"decoder.head.bias", {1}, 0, 0});
  return layout;
}

std::vector<Tensor> ModelParams::values() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value);
  return out;
}

const Tensor& ModelParams::value(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p.value;
  }
  fail(Errc::invalid_argument, "no parameter named " + name);
}

Checkpoint ModelParams::to_checkpoint() const {
  Checkpoint ckpt;
  auto as_tensor = [](const std::vector<std::size_t>& v) {
    return Tensor({v.size()}, std::vector<float>(v.begin(), v.end()));
  };
  ckpt.entries.push_back(
      {"meta.config",
       Tensor({5}, std::vector<float>{static_cast<float>(config.image_size),
                                      static_cast<float>(config.patch),
                                      static_cast<float>(config.rnn_units),
                                      static_cast<float>(config.renet_blocks),
                                      static_cast<float>(config.threshold)})});
  ckpt.entries.push_back({"meta.encoder_channels", as_tensor(config.encoder_channels)});
  ckpt.entries.push_back({"meta.decoder_channels", as_tensor(config.decoder_channels)});
  for (const auto& p : params) ckpt.entries.push_back({p.name, p.value});
  return ckpt;
}

ModelParams ModelParams::from_checkpoint(const Checkpoint& ckpt) {
  const Tensor* meta = ckpt.find("meta.config");
  const Tensor* enc = ckpt.find("meta.encoder_channels");
  const Tensor* dec = ckpt.find("meta.decoder_channels");
  if (!meta || !enc || !dec || meta->shape() != Shape{5} || enc->rank() != 1 || dec->rank() != 1) {
    fail(Errc::data, "checkpoint lacks model metadata");
  }
  auto as_sizes = [](const Tensor& t) {
    return std::vector<std::size_t>(t.data().begin(), t.data().end());
  };
  ModelParams mp;
  mp.config.image_size = static_cast<std::size_t>((*meta)[0]);
  mp.config.patch = static_cast<std::size_t>((*meta)[1]);
  mp.config.rnn_units = static_cast<std::size_t>((*meta)[2]);
  mp.config.renet_blocks = static_cast<std::size_t>((*meta)[3]);
  mp.config.threshold = (*meta)[4];
  mp.config.encoder_channels = as_sizes(*enc);
  mp.config.decoder_channels = as_sizes(*dec);
  try {
    mp.config.validate();
  } catch (const Error& e) {
    fail(Errc::data, std::string("checkpoint holds an invalid model config: ") + e.what());
  }
  for (const ParamSpec& spec : parameter_layout(mp.config)) {
    const Tensor* t = ckpt.find(spec.name);
    if (!t) fail(Errc::data, "checkpoint is missing parameter " + spec.name);
    if (t->shape() != spec.shape) {
      fail(Errc::data, "checkpoint parameter " + spec.name + " has shape " +
                           shape_string(t->shape()) + ", expected " + shape_string(spec.shape));
    }
    mp.params.push_back({spec.name, *t, Tensor(spec.shape)});
  }
  return mp;
}

ModelParams build_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams mp;
  mp.config = config;
  for (const ParamSpec& spec : parameter_layout(config)) {
    Tensor value(spec.shape);
    if (spec.init == Init::glorot) value = glorot_init(spec.shape, spec.fan_in, spec.fan_out, rng);
    if (spec.init == Init::he) value = he_uniform_init(spec.shape, spec.fan_in, rng);
    mp.params.push_back({spec.name, std::move(value), Tensor(spec.shape)});
  }
  return mp;
}

std::shared_ptr<const SparsePattern> PatternCache::get(const TconvGeometry& geometry) {
  for (const auto& p : patterns_) {
    if (p->geometry == geometry) return p;
  }
  patterns_.push_back(tconv_pattern(geometry));
  return patterns_.back();
}

// ---------------------------------------------------------------- network

template <typename T>
Network<T>::Network(ModelConfig config, std::vector<BasicTensor<T>> weights, std::size_t height,
                    std::size_t width, PatternCache* cache)
    : config_(std::move(config)), weights_(std::move(weights)), height_(height), width_(width) {
  config_.validate();
  config_.check_image_dims(height, width);
  const auto layout = parameter_layout(config_);
  if (layout.size() != weights_.size()) {
    fail(Errc::shape_mismatch, "network expects " + std::to_string(layout.size()) +
                                   " parameter tensors, got " + std::to_string(weights_.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    require_shape(weights_[i], layout[i].shape, layout[i].name.c_str());
  }
  std::size_t in_h = height / config_.downsampling(), in_w = width / config_.downsampling();
  std::size_t in_c = 2 * config_.rnn_units;
  for (std::size_t s = 0; s < config_.decoder_channels.size(); ++s) {
    const TconvGeometry g{in_h, in_w, in_c, kDecoderKernel, kDecoderKernel,
                          config_.decoder_channels[s], kDecoderStride};
    auto pattern = cache ? cache->get(g) : tconv_pattern(g);
    decoder_matrices_.push_back(std::make_shared<const SparseMatrix<T>>(
        tconv_sparse_matrix(weights_[decoder_base() + 2 * s], std::move(pattern))));
    in_h *= 2;
    in_w *= 2;
    in_c = config_.decoder_channels[s];
  }
}

template <typename T>
std::size_t Network<T>::renet_base(std::size_t block) const {
  return 2 * kEncoderConvs + 12 * block;
}

template <typename T>
std::size_t Network<T>::decoder_base() const {
  return renet_base(config_.renet_blocks);
}

template <typename T>
BasicTensor<T> Network<T>::encode(const BasicTensor<T>& image, std::vector<TapeEntry>* tape) const {
  require_shape(image, {height_, width_, kInputChannels}, "encode input");
  BasicTensor<T> x = image;
  std::size_t in = kInputChannels;
  for (std::size_t l = 0; l < kEncoderConvs; ++l) {
    const ConvSpec spec{in, config_.encoder_channels[l], 3, 3, 1, 1};
    auto [conv, conv_rec] = conv2d_forward(x, weights_[2 * l], weights_[2 * l + 1], spec);
    auto [act, act_rec] = activation_forward(conv, Activation::relu);
    if (tape) {
      tape->push_back({std::move(conv_rec), 2 * l});
      tape->push_back({std::move(act_rec), std::nullopt});
    }
    x = std::move(act);
    if (l == kPoolAfter[0] || l == kPoolAfter[1]) {
      auto [pooled, pool_rec] = maxpool2x2_forward(x);
      if (tape) tape->push_back({std::move(pool_rec), std::nullopt});
      x = std::move(pooled);
    }
    in = config_.encoder_channels[l];
  }
  return x;
}

template <typename T>
BasicTensor<T> Network<T>::renet(const BasicTensor<T>& features,
                                 std::vector<RenetRecord<T>>* records) const {
  BasicTensor<T> x = features;
  for (std::size_t b = 0; b < config_.renet_blocks; ++b) {
    const std::size_t base = renet_base(b);
    RenetParams<T> params;
    for (std::size_t d = 0; d < 4; ++d) {
      params[d] = {weights_[base + 3 * d], weights_[base + 3 * d + 1], weights_[base + 3 * d + 2]};
    }
    const std::size_t patch = b == 0 ? config_.patch : 1;
    auto [out, rec] = renet_block(x, params, patch, patch);
    if (records) records->push_back(std::move(rec));
    x = std::move(out);
  }
  return x;
}

template <typename T>
BasicTensor<T> Network<T>::decode(const BasicTensor<T>& renet_out,
                                  std::vector<TapeEntry>* tape) const {
  const std::size_t d = config_.downsampling();
  require_shape(renet_out, {height_ / d, width_ / d, 2 * config_.rnn_units}, "decode input");
  BasicTensor<T> x = renet_out;
  const std::size_t base = decoder_base();
  for (std::size_t s = 0; s < decoder_matrices_.size(); ++s) {
    const std::size_t in_h = x.dim(0), in_w = x.dim(1);
    auto [raw, tconv_rec] = tconv_forward(x, decoder_matrices_[s], weights_[base + 2 * s + 1]);
    // Raw extent is 2 * in + 2; trim one cell per side to double exactly.
    auto [cropped, crop_rec] = crop_forward(raw, 1, 1, 2 * in_h, 2 * in_w);
    auto [act, act_rec] = activation_forward(cropped, Activation::relu);
    if (tape) {
      tape->push_back({std::move(tconv_rec), base + 2 * s});
      tape->push_back({std::move(crop_rec), std::nullopt});
      tape->push_back({std::move(act_rec), std::nullopt});
    }
    x = std::move(act);
  }
  const std::size_t head = base + 2 * decoder_matrices_.size();
  const ConvSpec spec{config_.decoder_channels.back(), 1, 1, 1, 1, 0};
  auto [logits, head_rec] = conv2d_forward(x, weights_[head], weights_[head + 1], spec);
  auto [prob, sig_rec] = activation_forward(logits, Activation::sigmoid);
  if (tape) {
    tape->push_back({std::move(head_rec), head});
    tape->push_back({std::move(sig_rec), std::nullopt});
  }
  return prob;
}

template <typename T>
typename Network<T>::Trace Network<T>::forward(const BasicTensor<T>& image) const {
  Trace trace;
  const BasicTensor<T> features = encode(image, &trace.encoder);
  const BasicTensor<T> coupled = renet(features, &trace.renet);
  trace.probabilities = decode(coupled, &trace.decoder);
  return trace;
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::backward(const Trace& trace,
                                                 const BasicTensor<T>& grad_probabilities) const {
  std::vector<BasicTensor<T>> grads;
  grads.reserve(weights_.size());
  for (const auto& w : weights_) grads.emplace_back(w.shape());

  auto run_tape = [&](const std::vector<TapeEntry>& tape, BasicTensor<T> g) {
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
      Gradients<T> step = renetseg::backward(it->record, g);
      if (it->param) {
        accumulate(grads[*it->param], step.params[0]);
        accumulate(grads[*it->param + 1], step.params[1]);
      }
      g = std::move(step.input);
    }
    return g;
  };

  BasicTensor<T> g = run_tape(trace.decoder, grad_probabilities);
  for (std::size_t b = trace.renet.size(); b-- > 0;) {
    RenetGradients<T> rg = renet_block_backward(trace.renet[b], g);
    const std::size_t base = renet_base(b);
    for (std::size_t d = 0; d < 4; ++d) {
      accumulate(grads[base + 3 * d], rg.params[d].input_weights);
      accumulate(grads[base + 3 * d + 1], rg.params[d].recurrent_weights);
      accumulate(grads[base + 3 * d + 2], rg.params[d].bias);
    }
    g = std::move(rg.input);
  }
  run_tape(trace.encoder, std::move(g));
  return grads;
}

template class Network<float>;
template class Network<double>;

// ---------------------------------------------------------------- float API

namespace {

Network<float> network_for(const ModelParams& params, const Tensor& image) {
  require_rank(image, 3, "model input");
  return Network<float>(params.config, params.values(), image.dim(0), image.dim(1));
}

}  // namespace

Tensor encode(const Tensor& image, const ModelParams& params) {
  return network_for(params, image).encode(image);
}

Tensor decode(const Tensor& renet_out, const ModelParams& params) {
  require_rank(renet_out, 3, "decode input");
  const std::size_t d = params.config.downsampling();
  return Network<float>(params.config, params.values(), renet_out.dim(0) * d,
                        renet_out.dim(1) * d)
      .decode(renet_out);
}

Tensor forward(const Tensor& image, const ModelParams& params) {
  return network_for(params, image).forward(image).probabilities;
}

GradientResult loss_and_gradients(std::span<const Example* const> batch,
                                  const ModelParams& params, PatternCache* cache) {
  if (batch.empty()) fail(Errc::data, "loss_and_gradients: empty batch");
  const Shape& image_shape = batch.front()->image.shape();
  require_rank(batch.front()->image, 3, "training image");
  Network<float> net(params.config, params.values(), image_shape[0], image_shape[1], cache);

  GradientResult result;
  for (const auto& p : params.params) result.gradients.emplace_back(p.value.shape());
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const Example* ex : batch) {
    require_shape(ex->mask, {image_shape[0], image_shape[1], 1}, "training mask");
    auto trace = net.forward(ex->image);
    auto [loss, bce_rec] = bce_loss(trace.probabilities, ex->mask);
    result.loss += loss * scale;
    const Tensor g = bce_backward(bce_rec, scale).input;
    const auto grads = net.backward(trace, g);
    for (std::size_t i = 0; i < grads.size(); ++i) accumulate(result.gradients[i], grads[i]);
    result.probabilities.push_back(std::move(trace.probabilities));
  }
  return result;
}

GradientResult loss_and_gradients(std::span<const Example> batch, const ModelParams& params) {
  std::vector<const Example*> ptrs;
  for (const auto& ex : batch) ptrs.push_back(&ex);
  return loss_and_gradients(ptrs, params);
}

void sgd_update(ModelParams& params, std::span<const Tensor> gradients, double lr,
                double momentum) {
  if (gradients.size() != params.params.size()) {
    fail(Errc::shape_mismatch, "sgd_update: " + std::to_string(gradients.size()) +
                                   " gradients for " + std::to_string(params.params.size()) +
                                   " parameters");
  }
  for (std::size_t i = 0; i < gradients.size(); ++i) {
    Parameter& p = params.params[i];
    require_shape(gradients[i], p.value.shape(), p.name.c_str());
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double v = momentum * p.velocity[k] - lr * gradients[i][k];
      p.velocity[k] = static_cast<float>(v);
      p.value[k] = static_cast<float>(p.value[k] + v);
    }
  }
}

Tensor predict_mask(const Tensor& probabilities, double threshold) {
  Tensor mask(probabilities.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = probabilities[i] >= threshold ? 1.0f : 0.0f;
  }
  return mask;
}

// ---------------------------------------------------------------- training

std::string TrainTrace::serialize() const {
  std::string out = "epoch,loss,dice\n";
  char buf[96];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", e.epoch, e.loss, e.dice);
    out += buf;
  }
  return out;
}

TrainResult train(const ModelConfig& config, std::span<const Example> dataset, Rng& rng,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (dataset.empty()) fail(Errc::data, "training set is empty");
  const Shape image_shape{config.image_size, config.image_size, kInputChannels};
  const Shape mask_shape{config.image_size, config.image_size, 1};
  for (const auto& ex : dataset) {
    if (ex.image.shape() != image_shape || ex.mask.shape() != mask_shape) {
      fail(Errc::data, "training example of shape " + shape_string(ex.image.shape()) +
                           " does not match image_size " + std::to_string(config.image_size));
    }
  }

  TrainResult result{build_model(config, rng), {}};
  PatternCache cache;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.next_index(i + 1)]);
    }
    double loss_sum = 0.0, dice_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(&dataset[order[k]]);

      GradientResult step = loss_and_gradients(batch, result.params, &cache);
      loss_sum += step.loss * static_cast<double>(batch.size());
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const Tensor pred = predict_mask(step.probabilities[k], config.threshold);
        dice_sum += metrics_from_counts(confusion_counts(pred, batch[k]->mask)).di;
      }
      sgd_update(result.params, step.gradients, config.learning_rate, config.momentum);
    }
    const double n = static_cast<double>(dataset.size());
    result.trace.epochs.push_back({epoch, loss_sum / n, dice_sum / n});
    if (on_epoch) on_epoch(result.trace.epochs.back());
  }
  return result;
}

}  // namespace renetseg
