// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "lipcmd/error.hpp"

namespace lipcmd {

double macro_f1(std::span<const int> truth, std::span<const int> predicted, std::size_t num_classes) {
  if (truth.size() != predicted.size()) throw Error(Errc::DimMismatch, "truth and prediction lengths differ");
  if (num_classes == 0) throw Error(Errc::EmptyInput, "no classes");
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (truth[i] < 0 || t >= num_classes) throw Error(Errc::IndexOutOfRange, "true class out of range");
    if (t == p) {
      tp[t] += 1;
    } else {
      fn[t] += 1;
      if (p < num_classes) fp[p] += 1;
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    total += denom == 0.0 ? 1.0 : 2 * tp[k] / denom;
  }
  return total / static_cast<double>(num_classes);
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error(Errc::DimMismatch, "truth and prediction lengths differ");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

SlopeEstimate ols_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 3) throw Error(Errc::InsufficientData, "slope needs at least 3 paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw Error(Errc::InsufficientData, "x has no spread");
  SlopeEstimate est;
  est.slope = sxy / sxx;
  est.intercept = my - est.slope * mx;
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (est.intercept + est.slope * x[i]);
    sse += r * r;
  }
  est.stderr_slope = std::sqrt(sse / (n - 2) / sxx);
  const boost::math::students_t dist(n - 2);
  const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
  est.ci_low = est.slope - t * est.stderr_slope;
  est.ci_high = est.slope + t * est.stderr_slope;
  return est;
}

}  // namespace lipcmd
