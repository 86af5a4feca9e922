// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lipcmd {

/// Unweighted mean of per-class F1 over classes [0, num_classes). A class with
/// no predictions and no true samples scores 1; otherwise undefined precision
/// or recall counts as 0.
double macro_f1(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes);

double accuracy(std::span<const int> truth, std::span<const int> predicted);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

Summary summarize(std::span<const double> values);

/// Ordinary least squares slope of y on x with a two-sided 95% confidence
/// interval (Student t, n - 2 degrees of freedom).
struct SlopeEstimate {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

SlopeEstimate ols_slope(std::span<const double> x, std::span<const double> y);

}  // namespace lipcmd
