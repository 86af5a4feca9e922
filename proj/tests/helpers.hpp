// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "lipcmd/embedding.hpp"

namespace lipcmd::test {

inline UnitEmbedding basis(std::size_t dim, std::size_t i) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return normalize(std::span<const double>(v));
}

// normalize(sum of w_k * e_k) over (index, weight) pairs
inline UnitEmbedding blend(std::size_t dim, std::initializer_list<std::pair<std::size_t, double>> parts) {
  std::vector<double> v(dim, 0.0);
  for (auto [i, w] : parts) v[i] += w;
  return normalize(std::span<const double>(v));
}

inline UnitEmbedding random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n;
  std::vector<double> v(dim);
  for (double& x : v) x = n(rng);
  return normalize(std::span<const double>(v));
}

}  // namespace lipcmd::test
