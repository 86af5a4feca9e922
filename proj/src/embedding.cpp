// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lipcmd/error.hpp"

namespace lipcmd {

Embedding::Embedding(std::vector<float> values) : values_(std::move(values)) {
  for (float x : values_) {
    if (!std::isfinite(x)) throw Error(Errc::CorruptEmbedding, "embedding has a non-finite entry");
  }
}

UnitEmbedding UnitEmbedding::adopt(std::vector<float> values) {
  if (values.empty()) throw Error(Errc::CorruptEmbedding, "empty embedding");
  for (float x : values) {
    if (!std::isfinite(x)) throw Error(Errc::CorruptEmbedding, "embedding has a non-finite entry");
  }
  const double norm = l2_norm(values);
  if (std::abs(norm - 1.0) > kUnitNormTolerance) {
    throw Error(Errc::CorruptEmbedding, "embedding is not unit length (norm " + std::to_string(norm) + ")");
  }
  return UnitEmbedding(std::move(values));
}

UnitEmbedding UnitEmbedding::negated() const {
  std::vector<float> out(values_.size());
  std::transform(values_.begin(), values_.end(), out.begin(), [](float x) { return -x; });
  return UnitEmbedding(std::move(out));
}

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

UnitEmbedding normalize(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::EmptyInput, "cannot normalize an empty vector");
  double sum = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(Errc::CorruptEmbedding, "embedding has a non-finite entry");
    sum += x * x;
  }
  const double norm = std::sqrt(sum);
  if (norm < kZeroNormEpsilon) throw Error(Errc::ZeroVector, "vector norm below 1e-12");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return UnitEmbedding(std::move(out));
}

UnitEmbedding normalize(std::span<const float> v) {
  std::vector<double> wide(v.begin(), v.end());
  return normalize(std::span<const double>(wide));
}

double cosine_similarity(const UnitEmbedding& a, const UnitEmbedding& b) {
  if (a.dim() != b.dim()) {
    throw Error(Errc::DimMismatch,
                "dimension mismatch: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double dot = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) dot += static_cast<double>(av[i]) * bv[i];
  return std::clamp(dot, -1.0, 1.0);
}

std::vector<double> mean_vector(std::span<const UnitEmbedding> samples) {
  if (samples.empty()) throw Error(Errc::EmptyInput, "no samples to average");
  const std::size_t dim = samples.front().dim();
  std::vector<double> mean(dim, 0.0);
  for (const auto& s : samples) {
    if (s.dim() != dim) throw Error(Errc::DimMismatch, "samples differ in dimension");
    const auto v = s.values();
    for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  }
  const double n = static_cast<double>(samples.size());
  for (double& x : mean) x /= n;
  return mean;
}

UnitEmbedding centroid(std::span<const UnitEmbedding> samples) {
  const auto mean = mean_vector(samples);
  return normalize(std::span<const double>(mean));
}

}  // namespace lipcmd
