#include "tosa/runner.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace tosa {

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void append_metrics(const fs::path& path, const MetricLog& log, std::size_t from_record) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("runner: cannot open '" + path.string() + "'");
  if (fresh) out << "phase,epoch,step,loss,accuracy\n";
  MetricLog tail;
  tail.records.assign(log.records.begin() + static_cast<std::ptrdiff_t>(from_record),
                      log.records.end());
  const std::string csv = tail.to_csv();
  out << csv.substr(csv.find('\n') + 1);  // strip header
}

}  // namespace

EvalSummary make_eval_summary(const ModelState& state, const Dataset& test) {
  EvalSummary s;
  s.baseline_accuracy = evaluate_accuracy(state, test, false);
  s.tosa_accuracy = evaluate_accuracy(state, test, true);
  const CostReport cost = model_cost(state.config);
  s.baseline_gflops = static_cast<double>(cost.baseline_total_macs) / 1e9;
  s.tosa_gflops = cost.gflops_paper_convention;
  s.reduction_percent = cost.reduction_fraction * 100.0;
  s.tokens = state.config.num_tokens();
  s.selected_tokens = selected_token_count(state.config.ratio, state.config.num_tokens());
  s.ratio = state.config.ratio;
  s.skip_scope = skip_scope_name(state.config.scope);
  return s;
}

std::string EvalSummary::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["baseline"]["accuracy"] = baseline_accuracy;
  j["baseline"]["gflops"] = baseline_gflops;
  j["baseline"]["reduction_percent"] = 0.0;
  j["tosa"]["accuracy"] = tosa_accuracy;
  j["tosa"]["gflops"] = tosa_gflops;
  j["tosa"]["reduction_percent"] = reduction_percent;
  j["token_counts"]["tokens"] = tokens;
  j["token_counts"]["selected"] = selected_tokens;
  j["ratio"] = ratio;
  j["skip_scope"] = skip_scope;
  return j.dump(indent);
}

std::string EvalSummary::to_table() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-10s %10s %10s %12s\n"
                "%-10s %9.2f%% %10.4f %11.1f%%\n"
                "%-10s %9.2f%% %10.4f %11.1f%%\n"
                "tokens: %zu selected per head: %zu (r=%.2f, scope=%s)\n",
                "model", "accuracy", "gflops", "reduction", "baseline",
                100.0 * baseline_accuracy, baseline_gflops, 0.0, "tosa", 100.0 * tosa_accuracy,
                tosa_gflops, reduction_percent, tokens, selected_tokens, ratio,
                skip_scope.c_str());
  return buf;
}

void run_pipeline(const RunConfig& config, std::ostream& out) {
  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);

  // config echo: an output directory belongs to exactly one effective config
  const std::string effective = render_effective_config(config);
  const fs::path echo_path = out_dir / "effective.cfg";
  if (fs::exists(echo_path)) {
    if (read_file(echo_path) != effective) {
      throw std::runtime_error("runner: '" + echo_path.string() +
                               "' was produced by a different config; use a fresh output directory");
    }
  } else {
    std::ofstream echo(echo_path);
    echo << effective;
  }

  auto [train, test] = load_datasets(config.model, config.data, config.seed);
  out << "dataset: " << train.size() << " train / " << test.size() << " test\n";

  ModelState state = ModelState::init(config.model, config.seed);
  const fs::path metrics_path = out_dir / "metrics.csv";
  MetricLog log;

  for (const std::string& name : config.phase_order) {
    if (name == "eval") {
      const EvalSummary summary = make_eval_summary(state, test);
      {
        std::ofstream report(out_dir / "report.json");
        report << summary.to_json() << "\n";
      }
      {
        std::ofstream costs(out_dir / "cost.json");
        costs << model_cost(state.config).to_json() << "\n";
      }
      out << summary.to_table();
      out << "eval: report.json + cost.json written\n";
      continue;
    }

    const Phase phase = phase_from_name(name);
    const fs::path ckpt = out_dir / ("phase_" + name + ".ckpt");
    if (fs::exists(ckpt)) {
      ModelState loaded = load_checkpoint(ckpt.string());
      check_config_compatible(config.model, loaded.config, /*allow_runtime_overrides=*/false);
      state = std::move(loaded);
      out << "phase " << name << ": resume (checkpoint exists)\n";
      continue;
    }

    const TrainConfig& phase_config = config.phase_config(phase);
    const std::size_t log_mark = log.records.size();
    PhaseReport report;
    try {
      switch (phase) {
        case Phase::kPretrain:
          report = pretrain(state, phase_config, train, log);
          break;
        case Phase::kSelector:
          report = train_selectors(state, phase_config, train, test, log);
          break;
        case Phase::kFinetune:
          report = finetune(state, phase_config, train, log);
          break;
        case Phase::kDense:
          report = train_dense_head(state, phase_config, train, log);
          break;
      }
    } catch (...) {
      append_metrics(metrics_path, log, log_mark);  // keep partial rows
      throw;
    }
    append_metrics(metrics_path, log, log_mark);
    save_checkpoint(state, ckpt.string());

    out << "phase " << name << ": done, loss " << report.final_loss;
    if (phase == Phase::kPretrain || phase == Phase::kFinetune) {
      out << ", train accuracy " << report.final_accuracy;
    }
    if (phase == Phase::kSelector) {
      out << ", probe kld " << report.initial_probe_kld << " -> " << report.final_probe_kld;
      if (report.non_decreasing_warning) {
        out << " (warning: held-out KLD did not decrease over the budget)";
      }
    }
    out << "\n";
  }
}

}  // namespace tosa
