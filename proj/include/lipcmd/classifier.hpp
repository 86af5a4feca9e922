// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lipcmd/embedding.hpp"

namespace lipcmd {

struct LabeledSample {
  UnitEmbedding embedding;
  std::string label;
  std::optional<std::string> condition;
  std::int64_t t_ms = 0;

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// Batch gradient descent settings. Training starts from zero weights and is
/// full-batch, so results are a pure function of the samples and this config.
struct FitConfig {
  double l2 = 1e-4;
  double learning_rate = 0.5;
  double tol = 1e-6;
  int max_iters = 500;
};

struct RankedLabel {
  std::string label;
  double probability = 0.0;
};

struct Prediction {
  std::string label;
  double score = 0.0;
  std::vector<RankedLabel> ranking;  // every label, probability descending
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Softmax (multinomial logistic) classifier over unit embeddings. Immutable
/// once fitted; predict() is safe to call from several threads.
class LinearClassifier {
 public:
  LinearClassifier(std::vector<std::string> labels, RowMatrix weights, Eigen::VectorXd bias,
                   std::size_t trained_on = 0);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t num_classes() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(weights_.cols()); }
  const RowMatrix& weights() const noexcept { return weights_; }
  const Eigen::VectorXd& bias() const noexcept { return bias_; }
  std::size_t trained_on() const noexcept { return trained_on_; }

  int iterations() const noexcept { return iterations_; }
  double final_loss() const noexcept { return final_loss_; }

  /// Posterior for each label, in labels() order.
  Eigen::VectorXd probabilities(const UnitEmbedding& e) const;
  double probability_of(const UnitEmbedding& e, const std::string& label) const;

  /// Argmax label; ties go to the lexicographically smallest label.
  Prediction predict(const UnitEmbedding& e) const;

  /// Batched argmax over the rows of `x` (n x dim), returning label indices.
  std::vector<int> predict_indices(const RowMatrix& x) const;

 private:
  friend LinearClassifier fit_weighted(std::span<const LabeledSample>, std::span<const double>,
                                       const FitConfig&);

  std::vector<std::string> labels_;
  RowMatrix weights_;
  Eigen::VectorXd bias_;
  std::size_t trained_on_ = 0;
  int iterations_ = 0;
  double final_loss_ = 0.0;
};

/// Minimizes mean softmax cross-entropy + (l2/2)|W|^2. Labels are ordered
/// lexicographically. Throws InsufficientData for an empty set and
/// SingleClass when fewer than two labels are present.
LinearClassifier fit(std::span<const LabeledSample> samples, const FitConfig& config = {});

/// As fit(), with a per-sample weight (weights are normalized to sum to one).
LinearClassifier fit_weighted(std::span<const LabeledSample> samples,
                              std::span<const double> sample_weights, const FitConfig& config = {});

inline constexpr const char* kKeywordClass = "keyword";
inline constexpr const char* kNegativeClass = "negative";

/// Two-class keyword re-examination model. Each class contributes equal total
/// weight to the loss regardless of how many samples it has.
LinearClassifier fit_binary_kws(std::span<const UnitEmbedding> positives,
                                std::span<const UnitEmbedding> negatives,
                                const FitConfig& config = {});

/// Stacks embeddings into an n x dim matrix.
RowMatrix stack_rows(std::span<const UnitEmbedding> rows);

}  // namespace lipcmd
