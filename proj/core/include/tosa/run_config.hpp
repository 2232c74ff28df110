#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tosa/dataset.hpp"
#include "tosa/model.hpp"
#include "tosa/training.hpp"

namespace tosa {

/// Config-file problem with a file:line anchor.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& file, std::size_t line, const std::string& message)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + message),
        file_(file),
        line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// One experiment: model + data + per-phase training configs + output
/// location. Parsed from flat `key = value` text under [section]
/// headers; every key has a default, unknown keys are errors.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  std::map<Phase, TrainConfig> phases;
  std::vector<std::string> phase_order;  // subsequence of pretrain,selector,finetune,dense,eval
  std::uint64_t seed = 42;
  std::string out_dir = "runs/out";

  const TrainConfig& phase_config(Phase phase) const { return phases.at(phase); }
};

RunConfig default_run_config();

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& filename);

/// Canonical echo of the effective config (defaults applied). Parsing
/// the echo reproduces the RunConfig exactly.
std::string render_effective_config(const RunConfig& config);

}  // namespace tosa
