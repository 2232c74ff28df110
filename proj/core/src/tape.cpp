#include "tosa/tape.hpp"

#include <stdexcept>

namespace tosa {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}

GradTape::GradTape() : prev_(g_active_tape) { g_active_tape = this; }

GradTape::~GradTape() { g_active_tape = prev_; }

GradTape* GradTape::active() { return g_active_tape; }

void GradTape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void GradTape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::runtime_error("GradTape::backward called twice; re-execute the forward pass first");
  }
  if (loss.size() != 1) {
    throw std::invalid_argument("GradTape::backward requires a scalar loss, got shape " + loss.shape_string());
  }
  consumed_ = true;
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

bool grad_enabled() { return g_active_tape != nullptr; }

}  // namespace tosa
