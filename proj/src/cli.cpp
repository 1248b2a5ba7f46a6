#include "renetseg/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "renetseg/dataset.hpp"
#include "renetseg/error.hpp"
#include "renetseg/gradcheck.hpp"
#include "renetseg/metrics.hpp"
#include "renetseg/pnm.hpp"
#include "renetseg/synthetic.hpp"

namespace renetseg {

namespace fs = std::filesystem;

std::vector<std::size_t> decoder_plan(std::size_t patch) {
  std::size_t stages = 0;
  while ((std::size_t{1} << stages) < 4 * patch) ++stages;
  std::vector<std::size_t> widths(stages);
  for (std::size_t i = 0; i < stages; ++i) widths[i] = std::size_t{8} << (stages - 1 - i);
  return widths;
}

ModelConfig parse_config_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(Errc::config, "config must be a JSON object");

  ModelConfig config;
  auto count = [](const nlohmann::json& v, const std::string& key) -> std::uint64_t {
    if (!v.is_number_unsigned()) fail(Errc::config, "config key " + key + " must be a non-negative integer");
    return v.get<std::uint64_t>();
  };
  auto real = [](const nlohmann::json& v, const std::string& key) {
    if (!v.is_number()) fail(Errc::config, "config key " + key + " must be a number");
    return v.get<double>();
  };
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") config.seed = count(value, key);
    else if (key == "image_size") config.image_size = count(value, key);
    else if (key == "rnn_units") config.rnn_units = count(value, key);
    else if (key == "patch") config.patch = count(value, key);
    else if (key == "lr") config.learning_rate = real(value, key);
    else if (key == "momentum") config.momentum = real(value, key);
    else if (key == "batch_size") config.batch_size = count(value, key);
    else if (key == "epochs") config.epochs = count(value, key);
    else if (key == "threshold") config.threshold = real(value, key);
    else fail(Errc::config, "unknown config key: " + key);
  }
  config.decoder_channels = decoder_plan(config.patch);
  config.validate();
  return config;
}

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io, "cannot write " + path);
  out << text;
  if (!out) fail(Errc::io, "write failed: " + path);
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

/// Masks keyed by id: `<id>_segmentation.pgm` or plain `<id>.pgm`.
std::map<std::string, Tensor> load_masks(const std::string& directory) {
  if (!fs::is_directory(directory)) fail(Errc::io, "not a directory: " + directory);
  const std::string suffix = kMaskSuffix;
  std::map<std::string, Tensor> masks;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    std::string id;
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      id = name.substr(0, name.size() - suffix.size());
    } else if (name.size() > 4 && name.ends_with(".pgm")) {
      id = name.substr(0, name.size() - 4);
    } else {
      continue;
    }
    if (!masks.emplace(id, binarize_mask(read_pnm_file(entry.path().string()))).second) {
      fail(Errc::pairing, "two masks for id " + id + " in " + directory);
    }
  }
  if (masks.empty()) fail(Errc::data, "no masks in " + directory);
  return masks;
}

int cmd_synth(const std::string& out, std::size_t count, std::uint64_t seed, std::size_t size) {
  fs::create_directories(out);
  for (const ImageRecord& r : generate_synthetic(seed, count, size)) save_record(r, out);
  std::printf("wrote %zu samples to %s\n", count, out.c_str());
  return kExitOk;
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& out,
              const std::string& trace_path) {
  const ModelConfig config = parse_config_json(read_text(config_path));
  std::vector<Example> examples;
  for (ImageRecord& r : load_dataset(data, config.image_size)) {
    if (!r.mask) fail(Errc::pairing, "image " + r.id + " has no mask");
    examples.push_back({std::move(r.image), std::move(*r.mask)});
  }
  if (examples.empty()) fail(Errc::data, "no training images in " + data);

  Rng rng(config.seed);
  const TrainResult result = train(config, examples, rng, [&](const EpochRecord& e) {
    if (e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == config.epochs) {
      std::fprintf(stderr, "epoch %zu loss %.6f dice %.6f\n", e.epoch, e.loss, e.dice);
    }
  });
  ensure_parent(out);
  save_checkpoint_file(result.params.to_checkpoint(), out);
  if (!trace_path.empty()) {
    ensure_parent(trace_path);
    write_text(trace_path, result.trace.serialize());
  }
  if (result.trace.epochs.empty()) {
    std::printf("initialized model without training on %zu images\n", examples.size());
  } else {
    const EpochRecord& last = result.trace.epochs.back();
    std::printf("trained %zu epochs on %zu images: loss %.6f dice %.6f\n", last.epoch,
                examples.size(), last.loss, last.dice);
  }
  return kExitOk;
}

Tensor predict(const Tensor& image, const ModelParams& params, PatternCache& cache) {
  params.config.check_image_dims(image.dim(0), image.dim(1));
  Network<float> net(params.config, params.values(), image.dim(0), image.dim(1), &cache);
  return predict_mask(net.forward(image).probabilities, params.config.threshold);
}

int cmd_infer(const std::string& model, const std::string& image_path, const std::string& out) {
  const ModelParams params = ModelParams::from_checkpoint(load_checkpoint_file(model));
  const Tensor image = read_pnm_file(image_path);
  if (image.dim(2) != kInputChannels) fail(Errc::data, image_path + ": expected a colour (P6) image");
  PatternCache cache;
  const Tensor mask = predict(image, params, cache);
  ensure_parent(out);
  write_pnm_file(mask, out);
  return kExitOk;
}

int report(const DatasetEvaluation& ev, const std::string& report_path, double min_jaccard) {
  const std::vector<std::pair<std::string, MetricsReport>> rows{{"macro", ev.macro},
                                                                {"micro", ev.micro}};
  std::fputs(format_report(rows).c_str(), stdout);
  ensure_parent(report_path);
  write_text(report_path, format_key_values(rows));
  if (ev.macro.ja < min_jaccard) {
    std::fprintf(stderr, "macro jaccard %.6f is below the bound %.6f\n", ev.macro.ja, min_jaccard);
    return kExitCheck;
  }
  return kExitOk;
}

int cmd_eval_model(const std::string& model, const std::string& data, const std::string& report_path,
                   double min_jaccard) {
  const ModelParams params = ModelParams::from_checkpoint(load_checkpoint_file(model));
  PatternCache cache;
  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (ImageRecord& r : load_dataset(data, 0)) {
    if (!r.mask) fail(Errc::pairing, "image " + r.id + " has no mask");
    pairs.emplace_back(predict(r.image, params, cache), std::move(*r.mask));
  }
  if (pairs.empty()) fail(Errc::data, "no images in " + data);
  return report(evaluate_dataset(pairs), report_path, min_jaccard);
}

int cmd_eval_masks(const std::string& pred_dir, const std::string& gt_dir,
                   const std::string& report_path, double min_jaccard) {
  std::map<std::string, Tensor> pred = load_masks(pred_dir);
  std::map<std::string, Tensor> gt = load_masks(gt_dir);
  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (auto& [id, mask] : gt) {
    auto it = pred.find(id);
    if (it == pred.end()) fail(Errc::pairing, "no prediction for " + id);
    pairs.emplace_back(std::move(it->second), std::move(mask));
    pred.erase(it);
  }
  if (!pred.empty()) fail(Errc::pairing, "prediction " + pred.begin()->first + " has no ground truth");
  return report(evaluate_dataset(pairs), report_path, min_jaccard);
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const GradcheckResult& r : run_gradient_suite(seed)) {
    std::printf("%-20s max_rel_error %.3e  tolerance %.0e  checked %5zu", r.name.c_str(),
                r.max_rel_error, r.tolerance, r.checked);
    if (r.skipped > 0) std::printf("  skipped %zu", r.skipped);
    std::printf("  %s\n", r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kExitOk : kExitCheck;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Skin lesion segmentation with recurrent patch sweeps between a convolutional "
               "encoder and decoder",
               "renetseg"};
  app.require_subcommand(1);

  std::string out, data, config, trace, model, image, report_path, pred, gt;
  std::size_t count = 0, size = 64;
  std::uint64_t seed = 1;
  double min_jaccard = 0.0;

  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic image/mask pairs");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--count", count, "Number of samples")->required();
  synth->add_option("--seed", seed, "Generator seed")->required();
  synth->add_option("--size", size, "Image side length")->capture_default_str();

  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset directory");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--config", config, "JSON configuration")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--trace", trace, "Per-epoch trace CSV");

  CLI::App* inf = app.add_subcommand("infer", "Predict a binary mask for one image");
  inf->add_option("--model", model, "Checkpoint path")->required();
  inf->add_option("--image", image, "Input P6 image")->required();
  inf->add_option("--out", out, "Output P5 mask")->required();

  CLI::App* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  auto* ev_model = ev->add_option("--model", model, "Checkpoint path");
  auto* ev_data = ev->add_option("--data", data, "Dataset directory");
  auto* ev_pred = ev->add_option("--pred", pred, "Directory of predicted masks");
  auto* ev_gt = ev->add_option("--gt", gt, "Directory of ground-truth masks");
  ev->add_option("--report", report_path, "Key/value report path")->required();
  ev->add_option("--min-jaccard", min_jaccard, "Fail when macro Jaccard is below this bound");
  ev_model->needs(ev_data)->excludes(ev_pred)->excludes(ev_gt);
  ev_data->needs(ev_model);
  ev_pred->needs(ev_gt);
  ev_gt->needs(ev_pred);

  CLI::App* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", seed, "Suite seed")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
    if (ev->parsed() && model.empty() && pred.empty()) {
      throw CLI::RequiredError("eval needs --model/--data or --pred/--gt");
    }
  } catch (const CLI::CallForHelp& e) {
    std::cout << (app.get_subcommands().empty() ? app.help()
                                                : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(out, count, seed, size);
    if (tr->parsed()) return cmd_train(data, config, out, trace);
    if (inf->parsed()) return cmd_infer(model, image, out);
    if (ev->parsed()) {
      return pred.empty() ? cmd_eval_model(model, data, report_path, min_jaccard)
                          : cmd_eval_masks(pred, gt, report_path, min_jaccard);
    }
    return cmd_gradcheck(seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace renetseg
