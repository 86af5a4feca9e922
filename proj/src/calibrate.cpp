// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <sstream>

#include "lipcmd/error.hpp"
#include "lipcmd/eval.hpp"
#include "lipcmd/simulator.hpp"

namespace lipcmd {

Summary one_shot_f1(const SimParams& params, std::size_t seeds, std::size_t repetitions) {
  if (seeds == 0) throw Error(Errc::InsufficientData, "need at least one seed");
  std::vector<double> values;
  values.reserve(seeds);
  ShotsConfig shots;
  shots.command_counts = {params.num_commands};
  shots.shot_counts = {1};
  shots.repeats = 1;
  for (std::size_t s = 0; s < seeds; ++s) {
    const SimWorld world(params, s);
    const EmbeddingDataset data = generate_dataset(world, repetitions);
    shots.seed = s;
    const auto report = run_shots_experiment(data, shots);
    const auto& v = report.cells.front().values;
    values.insert(values.end(), v.begin(), v.end());
  }
  return summarize(values);
}

namespace {

std::vector<double> default_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 40; ++i) grid.push_back(0.1 * i);
  return grid;
}

}  // namespace

CalibrationResult calibrate_nothrow(const SimParams& base, const CalibrationTarget& target) {
  if (target.low > target.high) throw Error(Errc::InvalidConfig, "calibration band is empty");
  const auto grid = target.sigma_grid.empty() ? default_grid() : target.sigma_grid;
  CalibrationResult best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double sigma : grid) {
    SimParams p = base;
    p.noise = sigma;
    const Summary f1 = one_shot_f1(p, target.seeds);
    CalibrationResult here{p, f1.mean, f1.stddev, false, {}};
    if (f1.mean >= target.low && f1.mean <= target.high) {
      here.in_band = true;
      here.trace = std::move(best.trace);
      here.trace.emplace_back(sigma, f1.mean);
      return here;
    }
    best.trace.emplace_back(sigma, f1.mean);
    const double gap = f1.mean < target.low ? target.low - f1.mean : f1.mean - target.high;
    if (gap < best_gap) {
      best_gap = gap;
      auto trace = std::move(best.trace);
      best = here;
      best.trace = std::move(trace);
    }
    // F1 falls with sigma; once below the band nothing further can recover it
    if (f1.mean < target.low) break;
  }
  return best;
}

CalibrationResult calibrate(const SimParams& base, const CalibrationTarget& target) {
  auto result = calibrate_nothrow(base, target);
  if (!result.in_band) {
    std::ostringstream msg;
    msg << "no sigma reaches [" << target.low << ", " << target.high << "]; nearest sigma "
        << result.params.noise << " gives " << result.achieved;
    throw Error(Errc::TargetUnreachable, msg.str());
  }
  return result;
}

}  // namespace lipcmd
