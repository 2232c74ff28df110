#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tosa/dataset.hpp"
#include "tosa/model.hpp"

namespace tosa {

enum class Phase { kPretrain, kSelector, kFinetune, kDense };
enum class OptimizerKind { kSgdMomentum, kAdam };
enum class LossKind { kCrossEntropy, kKld, kMse };

const char* phase_name(Phase phase);
Phase phase_from_name(const std::string& name);
const char* optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);
const char* loss_name(LossKind kind);
LossKind loss_from_name(const std::string& name);

struct TrainConfig {
  Phase phase = Phase::kPretrain;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  double weight_decay = 0.0;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::kCrossEntropy;

  /// Positive hyperparameters, phase-compatible loss.
  void validate() const;
};

struct MetricRecord {
  std::string phase;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Append-only metric log; serializes to CSV with a fixed header. Step
/// rows carry batch loss/accuracy; each epoch also appends a summary
/// row whose step column equals the epoch's step count.
struct MetricLog {
  std::vector<MetricRecord> records;

  void add(std::string phase, std::size_t epoch, std::size_t step, double loss, double accuracy);
  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

struct PhaseReport {
  Phase phase = Phase::kPretrain;
  double final_loss = 0.0;
  double final_accuracy = 0.0;
  // selector phase only
  double initial_probe_kld = 0.0;
  double final_probe_kld = 0.0;
  bool non_decreasing_warning = false;
  // dense phase only
  double final_train_mse = 0.0;
};

/// Gradient application for a fixed parameter list. step() consumes and
/// zeroes the accumulated gradients.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<Tensor> params, double lr, double weight_decay);
  void step();
  void zero_grad();

 private:
  OptimizerKind kind_;
  std::vector<Tensor> params_;
  double lr_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;  // adam moments / sgd velocity
};

/// Phase 1: supervised training of the all-standard model with
/// cross-entropy. Deterministic for a fixed (seed, config, dataset);
/// divergence (non-finite loss) aborts with a descriptive error while
/// `log` keeps the rows recorded so far.
PhaseReport pretrain(ModelState& state, const TrainConfig& config, const Dataset& train,
                     MetricLog& log);

/// Phase 2: trains every scheduled token selector jointly against the
/// frozen model's next-layer attention maps (KL distillation). Only
/// selector parameters change; backbone bytes stay identical. The probe
/// set provides held-out KLD before/after.
PhaseReport train_selectors(ModelState& state, const TrainConfig& config, const Dataset& train,
                            const Dataset& probe, MetricLog& log);

/// Phase 3: converts scheduled layers to token-selective execution
/// (sets tosa_active) and finetunes everything except the selectors.
PhaseReport finetune(ModelState& state, const TrainConfig& config, const Dataset& train,
                     MetricLog& log);

/// Dense head: per-patch linear regression trained by MSE on frozen
/// backbone features (cached once per image).
PhaseReport train_dense_head(ModelState& state, const TrainConfig& config, const Dataset& train,
                             MetricLog& log);

// ---- evaluation helpers (frozen state, parallel over samples) ----

double evaluate_accuracy(const ModelState& state, const Dataset& dataset,
                         std::optional<bool> tosa_override = std::nullopt);
double evaluate_dense_mse(const ModelState& state, const Dataset& dataset,
                          std::optional<bool> tosa_override = std::nullopt);

/// Mean over (sample, scheduled layer) of the selector distillation
/// loss on the all-standard forward.
double evaluate_mean_kld(const ModelState& state, const Dataset& probe,
                         std::size_t max_samples = 32);

/// Mean per-head Jaccard overlap between the selector's attended sets
/// and the sets chosen by column-summing the true next-layer maps.
double teacher_plan_jaccard(const ModelState& state, const Dataset& dataset,
                            std::size_t max_samples = 16);

}  // namespace tosa
