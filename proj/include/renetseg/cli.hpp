#pragma once

#include <string>
#include <vector>

#include "renetseg/model.hpp"

namespace renetseg {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitCheck = 3 };

/// Parses a training configuration document. Accepted keys: seed,
/// image_size, rnn_units, patch, lr, momentum, batch_size, epochs,
/// threshold; anything else is rejected with Errc::config. The decoder
/// depth follows from the patch size.
ModelConfig parse_config_json(const std::string& text);

/// Decoder widths for a patch size: log2(4 * patch) stages ending at 8.
std::vector<std::size_t> decoder_plan(std::size_t patch);

/// Runs one subcommand (synth, train, infer, eval, gradcheck). `args`
/// excludes the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace renetseg
