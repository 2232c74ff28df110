#pragma once

#include <functional>
#include <vector>

#include "tosa/tensor.hpp"

namespace tosa {

/// Reverse-mode gradient tape. Constructing a GradTape installs it as
/// the active tape for the current thread; ops record one backward step
/// per executed differentiable op while a tape is active and at least
/// one input requires gradients. backward() replays the steps in exact
/// reverse execution order and may be called once per tape.
///
/// Training steps are single-threaded by contract; each worker thread
/// that wants gradients owns its own tape.
class GradTape {
 public:
  GradTape();
  ~GradTape();

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void record(std::function<void()> backward_step);

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded steps in reverse.
  /// `loss` must be scalar. Throws if the tape was already consumed.
  void backward(const Tensor& loss);

  std::size_t num_ops() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  GradTape* prev_ = nullptr;
};

/// Disables gradient recording for the current thread while alive.
/// Used for frozen-teacher forwards and selector inference.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  GradTape* saved_;
};

/// True when an op executed now would be recorded.
bool grad_enabled();

}  // namespace tosa
