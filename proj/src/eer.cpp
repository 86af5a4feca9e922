// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/eer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lipcmd/error.hpp"

namespace lipcmd {

EerResult compute_eer(std::span<const double> positive_scores, std::span<const double> negative_scores) {
  if (positive_scores.empty() || negative_scores.empty()) {
    throw Error(Errc::EmptyInput, "EER needs both positive and negative scores");
  }
  std::vector<double> pos(positive_scores.begin(), positive_scores.end());
  std::vector<double> neg(negative_scores.begin(), negative_scores.end());
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> pooled;
  pooled.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(pooled));
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> candidates;
  candidates.reserve(pooled.size() + 1);
  candidates.push_back(-inf);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  candidates.push_back(inf);

  const double n_pos = static_cast<double>(pos.size());
  const double n_neg = static_cast<double>(neg.size());
  EerResult best;
  double best_gap = inf;
  // Candidates ascend, so two-pointer counting keeps the sweep linear.
  std::size_t pos_below = 0;
  std::size_t neg_below = 0;
  for (double thr : candidates) {
    while (pos_below < pos.size() && pos[pos_below] < thr) ++pos_below;
    while (neg_below < neg.size() && neg[neg_below] < thr) ++neg_below;
    const double fnr = static_cast<double>(pos_below) / n_pos;
    const double fpr = static_cast<double>(neg.size() - neg_below) / n_neg;
    const double gap = std::abs(fpr - fnr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {0.5 * (fpr + fnr), thr, fpr, fnr};
    }
  }
  return best;
}

}  // namespace lipcmd
