#pragma once

#include <iosfwd>
#include <string>

#include "tosa/costmodel.hpp"
#include "tosa/run_config.hpp"
#include "tosa/training.hpp"

namespace tosa {

/// Accuracy/cost summary pairing the selective model against the same
/// dimensions run fully standard — the desk-scale counterpart of a
/// results-table row.
struct EvalSummary {
  double baseline_accuracy = 0.0;
  double tosa_accuracy = 0.0;
  double baseline_gflops = 0.0;
  double tosa_gflops = 0.0;
  double reduction_percent = 0.0;
  std::size_t tokens = 0;
  std::size_t selected_tokens = 0;
  double ratio = 1.0;
  std::string skip_scope;

  std::string to_json(int indent = 2) const;
  std::string to_table() const;
};

EvalSummary make_eval_summary(const ModelState& state, const Dataset& test);

/// Executes the configured phases in order inside config.out_dir:
/// echoes the effective config, appends metrics.csv, writes
/// phase_<name>.ckpt after each completed phase, and report.json /
/// cost.json for the eval pseudo-phase. Phases whose checkpoint already
/// exists are resumed from disk, not re-run. Throws on failure; partial
/// artifacts stay on disk.
void run_pipeline(const RunConfig& config, std::ostream& out);

}  // namespace tosa
