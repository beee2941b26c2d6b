#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cfn/tensor.hpp"

namespace cfn {

inline constexpr double kGradCheckEps = 1e-5;

// |analytic - numeric| / max(1, |analytic|, |numeric|)
double gradient_relative_error(double analytic, double numeric);

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_error() const;
  bool passed(double threshold) const { return max_error() < threshold; }
};

using Objective = std::function<double(const std::vector<TensorD>& params)>;
using AnalyticGradient = std::function<std::vector<TensorD>(const std::vector<TensorD>& params)>;

// Compares `gradient` against central differences of `objective`, one
// coordinate at a time. `names` labels each parameter tensor in the report.
// Throws NumericError if the objective or any gradient is non-finite.
GradCheckReport grad_check(const Objective& objective, const AnalyticGradient& gradient,
                           const std::vector<TensorD>& params, const std::vector<std::string>& names,
                           double eps = kGradCheckEps);

}  // namespace cfn
