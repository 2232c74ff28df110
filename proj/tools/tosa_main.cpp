// tosa: experiment runner for token-selective self-attention models.
// Subcommands: run, eval, visualize, report, cost.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tosa/costmodel.hpp"
#include "tosa/dataset.hpp"
#include "tosa/masks.hpp"
#include "tosa/model.hpp"
#include "tosa/run_config.hpp"
#include "tosa/runner.hpp"
#include "tosa/training.hpp"

namespace fs = std::filesystem;
using namespace tosa;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string ckpt_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<std::string> skip_scope;
  std::optional<std::string> phase;
};

void apply_model_overrides(ModelConfig& model, const CommonFlags& flags) {
  if (flags.ratio) model.ratio = *flags.ratio;
  if (flags.skip_scope) model.scope = skip_scope_from_name(*flags.skip_scope);
  model.validate();
}

RunConfig load_run_config(const CommonFlags& flags) {
  if (flags.config_path.empty()) throw std::runtime_error("--config is required");
  RunConfig config = parse_run_config(flags.config_path);
  if (flags.seed) {
    config.seed = *flags.seed;
    for (auto& [phase, cfg] : config.phases) cfg.seed = *flags.seed;
  }
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  apply_model_overrides(config.model, flags);
  if (flags.phase) {
    if (*flags.phase != "eval") phase_from_name(*flags.phase);  // validates the name
    config.phase_order = {*flags.phase};
  }
  return config;
}

ModelState load_state(const CommonFlags& flags, const RunConfig* config) {
  if (flags.ckpt_path.empty()) throw std::runtime_error("--ckpt is required");
  ModelState state = load_checkpoint(flags.ckpt_path);
  if (config) {
    check_config_compatible(config->model, state.config,
                            /*allow_runtime_overrides=*/true);
  }
  if (flags.ratio) state.config.ratio = *flags.ratio;
  if (flags.skip_scope) state.config.scope = skip_scope_from_name(*flags.skip_scope);
  state.config.validate();
  return state;
}

int cmd_run(const CommonFlags& flags) {
  RunConfig config = load_run_config(flags);
  run_pipeline(config, std::cout);
  return 0;
}

int cmd_eval(const CommonFlags& flags) {
  RunConfig config = load_run_config(flags);
  ModelState state = load_state(flags, &config);
  auto [train, test] = load_datasets(state.config, config.data, config.seed);
  (void)train;
  if (test.size() == 0) throw std::runtime_error("eval: the configured test split is empty");
  const double acc = evaluate_accuracy(state, test);
  std::cout << "test accuracy: " << 100.0 * acc << "% over " << test.size()
            << " images (token-selective: " << (state.tosa_active ? "on" : "off") << ")\n";
  return 0;
}

int cmd_report(const CommonFlags& flags) {
  RunConfig config = load_run_config(flags);
  ModelState state = load_state(flags, &config);
  auto [train, test] = load_datasets(state.config, config.data, config.seed);
  (void)train;
  if (test.size() == 0) throw std::runtime_error("report: the configured test split is empty");
  const EvalSummary summary = make_eval_summary(state, test);
  std::cout << summary.to_table();
  std::cout << summary.to_json() << "\n";
  if (!flags.out_dir.empty()) {
    fs::create_directories(flags.out_dir);
    std::ofstream report(fs::path(flags.out_dir) / "report.json");
    report << summary.to_json() << "\n";
    std::ofstream costs(fs::path(flags.out_dir) / "cost.json");
    costs << model_cost(state.config).to_json() << "\n";
  }
  return 0;
}

int cmd_cost(const CommonFlags& flags, bool exclude_selector) {
  RunConfig config = load_run_config(flags);
  CostModelOptions options;
  options.include_selector = !exclude_selector;
  std::cout << model_cost(config.model, options).to_json() << "\n";
  return 0;
}

int cmd_visualize(const CommonFlags& flags, int image_index, bool centered, bool blend) {
  RunConfig config = load_run_config(flags);
  ModelState state = load_state(flags, &config);
  if (state.config.tosa_layers.empty()) {
    throw std::runtime_error("visualize: checkpoint schedules no token-selective layers");
  }
  const std::string out_dir = flags.out_dir.empty() ? "masks" : flags.out_dir;
  fs::create_directories(out_dir);

  Tensor image;
  std::vector<std::size_t> pattern_patches;
  if (centered) {
    std::tie(image, pattern_patches) =
        centered_pattern_image(state.config, flags.seed.value_or(config.seed));
  } else {
    auto [train, test] = load_datasets(state.config, config.data, config.seed);
    (void)train;
    if (image_index < 0 || static_cast<std::size_t>(image_index) >= test.size()) {
      throw std::runtime_error("visualize: --image-index outside the test split");
    }
    image = test.images[static_cast<std::size_t>(image_index)];
  }

  ForwardOptions options;
  options.tosa_override = true;
  ForwardResult result = forward(image, state, ForwardMode::kFeatures, options);
  const auto masks = masks_from_plans(state.config, result.plans);

  std::size_t pattern_attended = 0, pattern_total = 0;
  for (const SelectionMask& m : masks) {
    const bool is_union = m.head == state.config.heads;
    const std::string name = "mask_layer" + std::to_string(m.layer) +
                             (is_union ? "_union" : "_head" + std::to_string(m.head)) + ".pgm";
    write_pgm((fs::path(out_dir) / name).string(), m.grid_width, m.grid_height, m.grid);
    if (blend && !is_union) {
      const std::string overlay = "overlay_layer" + std::to_string(m.layer) + "_head" +
                                  std::to_string(m.head) + ".pgm";
      write_pgm((fs::path(out_dir) / overlay).string(), state.config.image_size,
                state.config.image_size,
                blend_mask_over_image(image, m, state.config.patch_size));
    }
    std::cout << "layer " << m.layer << (is_union ? " union" : " head " + std::to_string(m.head))
              << ": " << m.attended_count << "/" << state.config.num_tokens()
              << " attended, cls " << (m.cls_attended ? "kept" : "dropped") << "\n";
    if (!is_union && !pattern_patches.empty()) {
      for (std::size_t patch : pattern_patches) {
        pattern_total += 1;
        if (m.grid[patch] == 255) pattern_attended += 1;
      }
    }
  }
  if (pattern_total > 0) {
    std::cout << "pattern patches attended: " << pattern_attended << "/" << pattern_total << " ("
              << 100.0 * static_cast<double>(pattern_attended) / static_cast<double>(pattern_total)
              << "%)\n";
  }
  std::cout << "masks written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-selective self-attention experiments"};
  app.require_subcommand(1);

  CommonFlags flags;
  bool exclude_selector = false;
  bool centered = false;
  bool blend = false;
  int image_index = 0;

  auto add_common = [&](CLI::App* cmd, bool with_ckpt) {
    cmd->add_option("--config", flags.config_path, "experiment config file");
    if (with_ckpt) cmd->add_option("--ckpt", flags.ckpt_path, "checkpoint path")->required();
    cmd->add_option("--seed", flags.seed, "override the run seed");
    cmd->add_option("--out", flags.out_dir, "override the output directory");
    cmd->add_option("--ratio", flags.ratio, "override the attention ratio r");
    cmd->add_option("--skip-scope", flags.skip_scope,
                    "override the skip scope (attention_only|attention_and_proj|full_layer)");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "execute the configured phases");
  add_common(run_cmd, false);
  run_cmd->add_option("--phase", flags.phase, "run a single phase instead of the configured list");

  CLI::App* eval_cmd = app.add_subcommand("eval", "test-split accuracy of a checkpoint");
  add_common(eval_cmd, true);

  CLI::App* report_cmd = app.add_subcommand("report", "accuracy + cost summary of a checkpoint");
  add_common(report_cmd, true);

  CLI::App* cost_cmd = app.add_subcommand("cost", "analytic FLOPs report for a config");
  add_common(cost_cmd, false);
  cost_cmd->add_flag("--no-selector", exclude_selector, "exclude selector overhead");

  CLI::App* vis_cmd = app.add_subcommand("visualize", "emit per-layer/head selection masks");
  add_common(vis_cmd, true);
  vis_cmd->add_option("--image-index", image_index, "test-split image to visualize");
  vis_cmd->add_flag("--centered", centered, "use a generated centered-pattern image");
  vis_cmd->add_flag("--blend", blend, "also write image-resolution overlays");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return cmd_run(flags);
    if (eval_cmd->parsed()) return cmd_eval(flags);
    if (report_cmd->parsed()) return cmd_report(flags);
    if (cost_cmd->parsed()) return cmd_cost(flags, exclude_selector);
    if (vis_cmd->parsed()) return cmd_visualize(flags, image_index, centered, blend);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
