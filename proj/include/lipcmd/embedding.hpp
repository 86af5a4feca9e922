// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace lipcmd {

/// Raw encoder output. Entries must be finite; the dimension is fixed per
/// registry or session (500 for the reference lip encoder).
class Embedding {
 public:
  Embedding() = default;
  explicit Embedding(std::vector<float> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const Embedding&, const Embedding&) = default;

 private:
  std::vector<float> values_;
};

/// An embedding with Euclidean norm 1 (within 1e-6). Only obtainable through
/// normalize(), centroid() or adopt(), so holders never re-check the norm.
class UnitEmbedding {
 public:
  UnitEmbedding() = default;

  /// Wraps values that are already unit length, bit for bit. Throws
  /// Errc::CorruptEmbedding when the norm is off or an entry is not finite.
  static UnitEmbedding adopt(std::vector<float> values);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }
  bool empty() const noexcept { return values_.empty(); }

  UnitEmbedding negated() const;

  friend bool operator==(const UnitEmbedding&, const UnitEmbedding&) = default;

 private:
  friend UnitEmbedding normalize(std::span<const double> v);
  explicit UnitEmbedding(std::vector<float> values) : values_(std::move(values)) {}

  std::vector<float> values_;
};

inline constexpr double kZeroNormEpsilon = 1e-12;
inline constexpr double kUnitNormTolerance = 1e-6;

double l2_norm(std::span<const float> v);

/// v / |v|. Throws Errc::ZeroVector when |v| < 1e-12 and Errc::EmptyInput
/// for a zero-length vector.
UnitEmbedding normalize(std::span<const double> v);
UnitEmbedding normalize(std::span<const float> v);
inline UnitEmbedding normalize(const Embedding& v) { return normalize(v.values()); }

/// Dot product of two unit embeddings clamped to [-1, 1].
double cosine_similarity(const UnitEmbedding& a, const UnitEmbedding& b);

/// Arithmetic mean without re-normalization.
std::vector<double> mean_vector(std::span<const UnitEmbedding> samples);

/// Mean of the samples re-normalized to unit length. Used for keyword and
/// non-speaking reference vectors.
UnitEmbedding centroid(std::span<const UnitEmbedding> samples);

}  // namespace lipcmd
