#include "cfn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace cfn {

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

double GradCheckReport::max_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

GradCheckReport grad_check(const Objective& objective, const AnalyticGradient& gradient,
                           const std::vector<TensorD>& params, const std::vector<std::string>& names,
                           double eps) {
  if (names.size() != params.size()) {
    throw ShapeError("grad_check: " + std::to_string(names.size()) + " names for " +
                     std::to_string(params.size()) + " parameters");
  }
  const auto analytic = gradient(params);
  if (analytic.size() != params.size()) {
    throw ShapeError("grad_check: gradient returned " + std::to_string(analytic.size()) +
                     " tensors for " + std::to_string(params.size()) + " parameters");
  }

  GradCheckReport report;
  auto probe = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (analytic[p].shape() != params[p].shape()) {
      throw ShapeError("grad_check: gradient of '" + names[p] + "' has shape " +
                       to_string(analytic[p].shape()) + ", parameter has " +
                       to_string(params[p].shape()));
    }
    GradCheckEntry entry{names[p], 0.0, 0};
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double original = params[p][i];
      probe[p][i] = original + eps;
      const double up = objective(probe);
      probe[p][i] = original - eps;
      const double down = objective(probe);
      probe[p][i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = analytic[p][i];
      if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(exact)) {
        throw NumericError("grad_check: non-finite value for '" + names[p] + "' at index " +
                           std::to_string(i));
      }
      const double err = gradient_relative_error(exact, numeric);
      if (err > entry.max_relative_error) {
        entry.max_relative_error = err;
        entry.worst_index = i;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace cfn
