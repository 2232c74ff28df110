#include "tosa/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "tosa/ops.hpp"
#include "tosa/rng.hpp"
#include "tosa/tape.hpp"
#include "tosa/threading.hpp"

namespace tosa {

// ---- enum names ----

const char* phase_name(Phase phase) {
  switch (phase) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kSelector: return "selector";
    case Phase::kFinetune: return "finetune";
    case Phase::kDense: return "dense";
  }
  throw std::invalid_argument("unknown phase");
}

Phase phase_from_name(const std::string& name) {
  if (name == "pretrain") return Phase::kPretrain;
  if (name == "selector") return Phase::kSelector;
  if (name == "finetune") return Phase::kFinetune;
  if (name == "dense") return Phase::kDense;
  throw std::invalid_argument("unknown phase '" + name + "'");
}

const char* optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "sgd-momentum";
}

OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd-momentum") return OptimizerKind::kSgdMomentum;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adam|sgd-momentum)");
}

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::kCrossEntropy: return "cross-entropy";
    case LossKind::kKld: return "kld";
    case LossKind::kMse: return "mse";
  }
  throw std::invalid_argument("unknown loss");
}

LossKind loss_from_name(const std::string& name) {
  if (name == "cross-entropy") return LossKind::kCrossEntropy;
  if (name == "kld") return LossKind::kKld;
  if (name == "mse") return LossKind::kMse;
  throw std::invalid_argument("unknown loss '" + name + "' (expected cross-entropy|kld|mse)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  const bool ok = (phase == Phase::kSelector && loss == LossKind::kKld) ||
                  (phase == Phase::kDense && loss == LossKind::kMse) ||
                  ((phase == Phase::kPretrain || phase == Phase::kFinetune) &&
                   loss == LossKind::kCrossEntropy);
  if (!ok) {
    throw std::invalid_argument(std::string("train config: loss '") + loss_name(loss) +
                                "' is incompatible with phase '" + phase_name(phase) + "'");
  }
}

// ---- metric log ----

void MetricLog::add(std::string phase, std::size_t epoch, std::size_t step, double loss,
                    double accuracy) {
  records.push_back({std::move(phase), epoch, step, loss, accuracy});
}

std::string MetricLog::to_csv() const {
  std::string out = "phase,epoch,step,loss,accuracy\n";
  char buf[160];
  for (const MetricRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.17g,%.17g\n", r.phase.c_str(), r.epoch, r.step,
                  r.loss, r.accuracy);
    out += buf;
  }
  return out;
}

void MetricLog::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("metric log: cannot open '" + path + "'");
  out << to_csv();
}

// ---- optimizer ----

Optimizer::Optimizer(OptimizerKind kind, std::vector<Tensor> params, double lr,
                     double weight_decay)
    : kind_(kind), params_(std::move(params)), lr_(lr), weight_decay_(weight_decay) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    if (kind_ == OptimizerKind::kAdam) v_.emplace_back(p.size(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::step() {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++t_;
  const double bias1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    if (!p.has_grad()) continue;
    double* value = p.data();
    double* grad = p.grad_mut().data();
    if (kind_ == OptimizerKind::kAdam) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i] + weight_decay_ * value[i];
        m_[pi][i] = beta1 * m_[pi][i] + (1.0 - beta1) * g;
        v_[pi][i] = beta2 * v_[pi][i] + (1.0 - beta2) * g * g;
        const double mhat = m_[pi][i] / bias1;
        const double vhat = v_[pi][i] / bias2;
        value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps);
      }
    } else {
      constexpr double momentum = 0.9;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grad[i] + weight_decay_ * value[i];
        m_[pi][i] = momentum * m_[pi][i] + g;
        value[i] -= lr_ * m_[pi][i];
      }
    }
  }
  zero_grad();
}

// ---- shared loop pieces ----

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < count; at += batch_size) {
    const std::size_t end = std::min(count, at + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::size_t argmax_row(const Tensor& logits) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits.data()[j] > logits.data()[best]) best = j;
  }
  return best;
}

/// One cross-entropy step over a batch. Returns (loss, batch accuracy).
std::pair<double, double> classification_step(ModelState& state, const Dataset& data,
                                              const std::vector<std::size_t>& batch,
                                              Optimizer& optimizer, bool tosa_active) {
  GradTape tape;
  std::vector<Tensor> logit_rows;
  std::vector<int> labels;
  logit_rows.reserve(batch.size());
  std::size_t correct = 0;
  ForwardOptions options;
  options.tosa_override = tosa_active;
  for (std::size_t idx : batch) {
    ForwardResult r = forward(data.images[idx], state, ForwardMode::kClassify, options);
    if (argmax_row(r.logits) == static_cast<std::size_t>(data.labels[idx])) ++correct;
    logit_rows.push_back(r.logits);
    labels.push_back(data.labels[idx]);
  }
  Tensor loss = nll_from_log_probs(log_softmax(concat_rows(logit_rows), 1), labels);
  const double loss_value = loss.item();
  tape.backward(loss);
  optimizer.step();
  return {loss_value, static_cast<double>(correct) / static_cast<double>(batch.size())};
}

struct TeacherSignals {
  // per scheduled layer: detached B maps of the previous layer and true
  // A maps of the layer itself
  std::vector<std::vector<Tensor>> selector_inputs;
  std::vector<std::vector<Tensor>> true_maps;
};

/// Frozen all-standard forward collecting what selector training needs.
TeacherSignals collect_teacher_signals(const ModelState& state, const Tensor& image) {
  NoGradGuard no_grad;
  ForwardOptions options;
  options.tosa_override = false;
  options.collect_artifacts = true;
  ForwardResult r = forward(image, state, ForwardMode::kFeatures, options);
  TeacherSignals signals;
  std::vector<std::size_t> layers = state.config.tosa_layers;
  std::sort(layers.begin(), layers.end());
  for (std::size_t layer : layers) {
    signals.selector_inputs.push_back(r.artifacts[layer - 2].pre_softmax);
    signals.true_maps.push_back(r.artifacts[layer - 1].softmaxed);
  }
  return signals;
}

double selector_batch_kld(const ModelState& state, const std::vector<TeacherSignals>& signals) {
  std::vector<std::size_t> layers = state.config.tosa_layers;
  std::sort(layers.begin(), layers.end());
  double total = 0.0;
  for (const TeacherSignals& s : signals) {
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const SelectorParams& sel = state.selectors.at(layers[li]);
      Tensor loss = selector_loss(predict_attention(s.selector_inputs[li], sel), s.true_maps[li]);
      total += loss.item();
    }
  }
  return total / static_cast<double>(signals.size() * layers.size());
}

}  // namespace

// ---- phase 1: pretrain ----

PhaseReport pretrain(ModelState& state, const TrainConfig& config, const Dataset& train,
                     MetricLog& log) {
  config.validate();
  train.validate();
  if (config.phase != Phase::kPretrain) throw std::invalid_argument("pretrain: wrong phase tag");
  if (state.tosa_active) {
    throw std::invalid_argument("pretrain: requires the all-standard schedule (tosa_active off)");
  }

  Optimizer optimizer(config.optimizer, state.backbone_params(), config.lr, config.weight_decay);
  Rng rng(config.seed);
  PhaseReport report;
  report.phase = Phase::kPretrain;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(train.size(), config.batch_size, rng);
    double epoch_loss = 0.0, epoch_acc = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      double loss, acc;
      try {
        std::tie(loss, acc) = classification_step(state, train, batches[step], optimizer, false);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("pretrain diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
      log.add("pretrain", epoch, step, loss, acc);
      epoch_loss += loss;
      epoch_acc += acc;
    }
    report.final_loss = epoch_loss / static_cast<double>(batches.size());
    report.final_accuracy = epoch_acc / static_cast<double>(batches.size());
    log.add("pretrain", epoch, batches.size(), report.final_loss, report.final_accuracy);
  }
  return report;
}

// ---- phase 2: selector distillation ----

PhaseReport train_selectors(ModelState& state, const TrainConfig& config, const Dataset& train,
                            const Dataset& probe, MetricLog& log) {
  config.validate();
  train.validate();
  if (config.phase != Phase::kSelector) throw std::invalid_argument("train_selectors: wrong phase tag");
  if (state.tosa_active) {
    throw std::invalid_argument("train_selectors: teacher forward requires the standard schedule");
  }
  if (state.selectors.empty()) {
    throw std::invalid_argument("train_selectors: the model schedules no token-selective layers");
  }

  std::vector<std::size_t> layers = state.config.tosa_layers;
  std::sort(layers.begin(), layers.end());

  PhaseReport report;
  report.phase = Phase::kSelector;
  report.initial_probe_kld = evaluate_mean_kld(state, probe);

  Optimizer optimizer(config.optimizer, state.selector_params(), config.lr, config.weight_decay);
  Rng rng(config.seed);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(train.size(), config.batch_size, rng);
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];

      // teacher signals per sample: frozen forwards, parallel batch assembly
      std::vector<TeacherSignals> signals(batch.size());
      parallel_for(batch.size(), [&](std::size_t i) {
        signals[i] = collect_teacher_signals(state, train.images[batch[i]]);
      });

      double loss_value;
      try {
        GradTape tape;
        Tensor batch_loss = Tensor::scalar(0.0);
        for (const TeacherSignals& s : signals) {
          for (std::size_t li = 0; li < layers.size(); ++li) {
            const SelectorParams& sel = state.selectors.at(layers[li]);
            Tensor loss =
                selector_loss(predict_attention(s.selector_inputs[li], sel), s.true_maps[li]);
            batch_loss = add(batch_loss, loss);
          }
        }
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(batch.size()));
        loss_value = batch_loss.item();
        tape.backward(batch_loss);
        optimizer.step();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("selector training diverged at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + ": " + e.what());
      }
      log.add("selector", epoch, step, loss_value, 0.0);
      epoch_loss += loss_value;
    }
    report.final_loss = epoch_loss / static_cast<double>(batches.size());
    log.add("selector", epoch, batches.size(), report.final_loss, 0.0);
  }

  report.final_probe_kld = evaluate_mean_kld(state, probe);
  report.non_decreasing_warning = report.final_probe_kld >= report.initial_probe_kld;
  return report;
}

// ---- phase 3: finetune with selective layers ----

PhaseReport finetune(ModelState& state, const TrainConfig& config, const Dataset& train,
                     MetricLog& log) {
  config.validate();
  train.validate();
  if (config.phase != Phase::kFinetune) throw std::invalid_argument("finetune: wrong phase tag");
  if (!state.config.tosa_layers.empty() && state.selectors.empty()) {
    throw std::invalid_argument("finetune: selectors missing for the scheduled layers");
  }

  state.tosa_active = true;  // scheduled layers now run token-selective
  Optimizer optimizer(config.optimizer, state.backbone_params(), config.lr, config.weight_decay);
  Rng rng(config.seed);
  PhaseReport report;
  report.phase = Phase::kFinetune;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(train.size(), config.batch_size, rng);
    double epoch_loss = 0.0, epoch_acc = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      double loss, acc;
      try {
        std::tie(loss, acc) = classification_step(state, train, batches[step], optimizer, true);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("finetune diverged at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
      log.add("finetune", epoch, step, loss, acc);
      epoch_loss += loss;
      epoch_acc += acc;
    }
    report.final_loss = epoch_loss / static_cast<double>(batches.size());
    report.final_accuracy = epoch_acc / static_cast<double>(batches.size());
    log.add("finetune", epoch, batches.size(), report.final_loss, report.final_accuracy);
  }
  return report;
}

// ---- dense head on frozen features ----

PhaseReport train_dense_head(ModelState& state, const TrainConfig& config, const Dataset& train,
                             MetricLog& log) {
  config.validate();
  train.validate();
  if (config.phase != Phase::kDense) throw std::invalid_argument("train_dense_head: wrong phase tag");
  if (train.dense_targets.empty()) {
    throw std::invalid_argument("train_dense_head: dataset has no dense targets");
  }
  state.ensure_dense_head(config.seed);

  // frozen backbone: cache per-image patch features once
  const std::size_t patches = state.config.num_patches();
  std::vector<std::size_t> patch_rows(patches);
  std::iota(patch_rows.begin(), patch_rows.end(), 1);
  std::vector<Tensor> features(train.size());
  parallel_for(train.size(), [&](std::size_t i) {
    NoGradGuard no_grad;
    ForwardResult r = forward(train.images[i], state, ForwardMode::kFeatures, {});
    features[i] = gather_rows(r.features, patch_rows);
  });

  Optimizer optimizer(config.optimizer, {state.dense_weight, state.dense_bias}, config.lr,
                      config.weight_decay);
  Rng rng(config.seed);
  PhaseReport report;
  report.phase = Phase::kDense;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_batches(train.size(), config.batch_size, rng);
    double epoch_loss = 0.0;
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& batch = batches[step];
      std::vector<Tensor> feat_parts, target_parts;
      feat_parts.reserve(batch.size());
      for (std::size_t idx : batch) {
        feat_parts.push_back(features[idx]);
        target_parts.push_back(train.dense_targets[idx]);
      }
      double loss_value;
      try {
        GradTape tape;
        Tensor pred = add_rows(matmul(concat_rows(feat_parts), state.dense_weight),
                               state.dense_bias);
        Tensor loss = mse_loss(pred, concat_rows(target_parts));
        loss_value = loss.item();
        tape.backward(loss);
        optimizer.step();
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("dense head training diverged at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(step) + ": " + e.what());
      }
      log.add("dense", epoch, step, loss_value, 0.0);
      epoch_loss += loss_value;
    }
    report.final_loss = epoch_loss / static_cast<double>(batches.size());
    log.add("dense", epoch, batches.size(), report.final_loss, 0.0);
  }
  report.final_train_mse = report.final_loss;
  return report;
}

// ---- evaluation ----

double evaluate_accuracy(const ModelState& state, const Dataset& dataset,
                         std::optional<bool> tosa_override) {
  if (dataset.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  ForwardOptions options;
  options.tosa_override = tosa_override;
  std::vector<std::uint8_t> correct(dataset.size(), 0);
  parallel_for(dataset.size(), [&](std::size_t i) {
    NoGradGuard no_grad;
    ForwardResult r = forward(dataset.images[i], state, ForwardMode::kClassify, options);
    correct[i] = argmax_row(r.logits) == static_cast<std::size_t>(dataset.labels[i]) ? 1 : 0;
  });
  std::size_t hits = 0;
  for (std::uint8_t c : correct) hits += c;
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double evaluate_dense_mse(const ModelState& state, const Dataset& dataset,
                          std::optional<bool> tosa_override) {
  if (dataset.size() == 0 || dataset.dense_targets.empty()) {
    throw std::invalid_argument("evaluate_dense_mse: dataset has no dense targets");
  }
  ForwardOptions options;
  options.tosa_override = tosa_override;
  std::vector<double> errors(dataset.size(), 0.0);
  parallel_for(dataset.size(), [&](std::size_t i) {
    NoGradGuard no_grad;
    ForwardResult r = forward(dataset.images[i], state, ForwardMode::kDense, options);
    errors[i] = mse_loss(r.dense, dataset.dense_targets[i]).item();
  });
  double total = 0.0;
  for (double e : errors) total += e;
  return total / static_cast<double>(dataset.size());
}

double evaluate_mean_kld(const ModelState& state, const Dataset& probe, std::size_t max_samples) {
  const std::size_t count = std::min(max_samples, probe.size());
  if (count == 0) throw std::invalid_argument("evaluate_mean_kld: empty probe set");
  std::vector<double> values(count, 0.0);
  parallel_for(count, [&](std::size_t i) {
    NoGradGuard no_grad;
    TeacherSignals s = collect_teacher_signals(state, probe.images[i]);
    values[i] = selector_batch_kld(state, {s});
  });
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(count);
}

double teacher_plan_jaccard(const ModelState& state, const Dataset& dataset,
                            std::size_t max_samples) {
  const std::size_t count = std::min(max_samples, dataset.size());
  if (count == 0) throw std::invalid_argument("teacher_plan_jaccard: empty dataset");
  std::vector<std::size_t> layers = state.config.tosa_layers;
  std::sort(layers.begin(), layers.end());
  if (layers.empty()) throw std::invalid_argument("teacher_plan_jaccard: no scheduled layers");

  auto column_sums = [](const std::vector<Tensor>& maps) {
    std::vector<Tensor> scores;
    for (const Tensor& m : maps) {
      const std::size_t len = m.rows();
      Tensor s = Tensor::zeros({len});
      for (std::size_t q = 0; q < len; ++q) {
        for (std::size_t j = 0; j < len; ++j) s.data()[j] += m.data()[q * len + j];
      }
      scores.push_back(std::move(s));
    }
    return scores;
  };

  std::vector<double> per_sample(count, 0.0);
  parallel_for(count, [&](std::size_t i) {
    NoGradGuard no_grad;
    TeacherSignals s = collect_teacher_signals(state, dataset.images[i]);
    double acc = 0.0;
    std::size_t terms = 0;
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const SelectorParams& sel = state.selectors.at(layers[li]);
      SelectionPlan predicted = select_tokens(
          importance_scores(predict_attention(s.selector_inputs[li], sel)),
          state.config.ratio, {0});
      SelectionPlan truth =
          select_tokens(column_sums(s.true_maps[li]), state.config.ratio, {0});
      for (std::size_t h = 0; h < predicted.heads.size(); ++h) {
        std::vector<std::size_t> both;
        std::set_intersection(predicted.heads[h].attended.begin(),
                              predicted.heads[h].attended.end(),
                              truth.heads[h].attended.begin(), truth.heads[h].attended.end(),
                              std::back_inserter(both));
        const std::size_t uni = predicted.heads[h].attended.size() +
                                truth.heads[h].attended.size() - both.size();
        acc += static_cast<double>(both.size()) / static_cast<double>(uni);
        ++terms;
      }
    }
    per_sample[i] = acc / static_cast<double>(terms);
  });
  double total = 0.0;
  for (double v : per_sample) total += v;
  return total / static_cast<double>(count);
}

}  // namespace tosa
