#include "tosa/gradcheck.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tosa/tape.hpp"

namespace tosa {

namespace {

double rel_dev(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  Tensor y = f();
  if (y.size() != 1) {
    throw std::invalid_argument("check_gradients: f must be scalar-valued, got shape " +
                                y.shape_string());
  }
  return y.item();
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << "max rel dev " << max_rel_dev << " at param " << worst_param << " index " << worst_index
     << " (analytic " << analytic_at_worst << ", numeric " << numeric_at_worst << ", "
     << checked_values << " values)";
  return os.str();
}

GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<Tensor>& leaves, double step) {
  if (leaves.empty()) throw std::invalid_argument("check_gradients: no leaves");
  if (step <= 0.0) throw std::invalid_argument("check_gradients: step must be positive");

  for (const Tensor& leaf : leaves) {
    const_cast<Tensor&>(leaf).set_requires_grad(true);
    const_cast<Tensor&>(leaf).zero_grad();
  }

  // analytic pass
  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    Tensor y = f();
    if (y.size() != 1) {
      throw std::invalid_argument("check_gradients: f must be scalar-valued, got shape " +
                                  y.shape_string());
    }
    tape.backward(y);
    for (const Tensor& leaf : leaves) {
      analytic.push_back(leaf.has_grad() ? leaf.grad() : std::vector<double>(leaf.size(), 0.0));
    }
  }

  // central differences, perturbing each leaf element in place
  GradCheckReport report;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    Tensor leaf = leaves[p];
    for (std::size_t i = 0; i < leaf.size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + step;
      const double up = eval_scalar(f);
      leaf.data()[i] = saved - step;
      const double down = eval_scalar(f);
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double dev = rel_dev(analytic[p][i], numeric);
      ++report.checked_values;
      if (dev > report.max_rel_dev) {
        report.max_rel_dev = dev;
        report.worst_param = p;
        report.worst_index = i;
        report.analytic_at_worst = analytic[p][i];
        report.numeric_at_worst = numeric;
      }
    }
  }
  for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
  return report;
}

GradCheckReport check_gradients(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                double step) {
  return check_gradients([&f, &x]() { return f(x); }, std::vector<Tensor>{x}, step);
}

}  // namespace tosa
