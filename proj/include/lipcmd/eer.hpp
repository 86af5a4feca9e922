// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

namespace lipcmd {

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;  // may be +/-infinity
  double fpr = 0.0;
  double fnr = 0.0;
};

/// Equal error rate of a score-based detector that accepts score >= threshold.
///
/// Candidate thresholds are -inf, +inf and the midpoints between adjacent
/// distinct scores of the pooled sample. The chosen threshold minimizes
/// |FPR - FNR| (ties go to the lower threshold) and the EER is reported as the
/// mean of the two rates there. Throws Errc::EmptyInput if either list is empty.
EerResult compute_eer(std::span<const double> positive_scores, std::span<const double> negative_scores);

}  // namespace lipcmd
