#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tosa/tensor.hpp"

namespace tosa {

/// Result of comparing tape gradients against central finite
/// differences. Deviation is |analytic - numeric| / max(1, |analytic|,
/// |numeric|), reported at its worst element.
struct GradCheckReport {
  double max_rel_dev = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked_values = 0;

  bool passed(double tol) const { return max_rel_dev < tol; }
  std::string summary() const;
};

/// Checks d f / d x for a scalar-valued f. x is perturbed in place for
/// the central differences and restored afterwards.
GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f,
                                Tensor x, double step = 1e-5);

/// Same oracle for a nullary function whose leaves are the given
/// tensors (e.g. the parameter set of a block).
GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& leaves,
                                double step = 1e-5);

}  // namespace tosa
