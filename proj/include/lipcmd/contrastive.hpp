// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "lipcmd/classifier.hpp"
#include "lipcmd/embedding.hpp"

namespace lipcmd {

inline constexpr double kDefaultTemperature = 0.07;

/// N paired unit embeddings; a_i and b_i come from the same class.
struct ContrastiveBatch {
  std::vector<UnitEmbedding> group_a;
  std::vector<UnitEmbedding> group_b;
  std::vector<int> class_ids;
};

/// s(i, j) = cos(a_i, b_j) / tau.
struct SimilarityMatrix {
  Eigen::MatrixXd s;
  double tau = kDefaultTemperature;
};

SimilarityMatrix similarity_matrix(const ContrastiveBatch& batch, double tau = kDefaultTemperature);

/// Symmetric InfoNCE: the mean of the row-wise (A to B) and column-wise (B to A)
/// cross-entropies with the diagonal as targets. Log-sum-exp stabilized.
double infonce_loss(const Eigen::MatrixXd& s);
inline double infonce_loss(const SimilarityMatrix& m) { return infonce_loss(m.s); }

/// dL/dS for the loss above: ((rowsoftmax(S) - I) + (colsoftmax(S) - I)) / 2N.
Eigen::MatrixXd infonce_loss_gradient(const Eigen::MatrixXd& s);

/// Affine map from raw features to the embedding space; outputs are
/// L2-normalized before use.
struct LinearAdapter {
  RowMatrix weight;  // dim_out x dim_in
  Eigen::VectorXd bias;

  static LinearAdapter identity(Eigen::Index dim);

  Eigen::Index dim_in() const { return weight.cols(); }
  Eigen::Index dim_out() const { return weight.rows(); }

  UnitEmbedding embed(std::span<const double> raw) const;
  std::vector<UnitEmbedding> embed_rows(const RowMatrix& raw) const;

  friend bool operator==(const LinearAdapter& a, const LinearAdapter& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

/// Paired raw feature rows (row i of `a` and of `b` share class_ids[i]).
struct RawPairBatch {
  RowMatrix a;
  RowMatrix b;
  std::vector<int> class_ids;
};

struct AdapterGradient {
  RowMatrix weight;
  Eigen::VectorXd bias;
};

struct LossAndGradient {
  double loss = 0.0;
  AdapterGradient gradient;
};

/// Loss of the batch after adapter + normalization, and its exact gradient
/// with respect to the adapter parameters. Throws ZeroVector when an adapter
/// output collapses to the origin.
LossAndGradient infonce_gradient(const RawPairBatch& batch, const LinearAdapter& adapter,
                                 double tau = kDefaultTemperature);

double adapter_loss(const RawPairBatch& batch, const LinearAdapter& adapter,
                    double tau = kDefaultTemperature);

/// Rows of raw features with integer class labels.
struct RawFeatureSet {
  RowMatrix features;
  std::vector<int> labels;
};

struct AdapterTrainConfig {
  int epochs = 200;
  int batch_size = 10;  // classes per batch, capped at the class count
  double learning_rate = 0.5;
  double tau = kDefaultTemperature;
  std::uint64_t seed = 0;
};

struct AdapterTrainResult {
  LinearAdapter adapter;
  std::vector<double> loss_trace;  // objective at the start of each epoch, plus the final value
};

/// Full-batch gradient descent on the mean InfoNCE loss over a fixed set of
/// class-disjoint pair batches drawn once from `seed`. A step that would
/// raise the loss is rejected and the learning rate halved, so the trace is
/// non-increasing. Starts from the identity adapter (dim_out = dim_in).
AdapterTrainResult train_adapter(const RawFeatureSet& data, const AdapterTrainConfig& config = {});

/// The pair batches train_adapter() optimizes over for this data and config.
std::vector<RawPairBatch> draw_pair_batches(const RawFeatureSet& data, const AdapterTrainConfig& config);

}  // namespace lipcmd
