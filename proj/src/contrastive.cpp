// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "lipcmd/error.hpp"

namespace lipcmd {

namespace {

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw Error(Errc::NonPositiveTau, "temperature must be positive");
}

// Forward pass of one group through the adapter: unit rows and pre-normalization norms.
struct Projected {
  RowMatrix unit;
  Eigen::VectorXd norms;
};

Projected project(const RowMatrix& raw, const LinearAdapter& adapter) {
  Projected p;
  p.unit = raw * adapter.weight.transpose();
  p.unit.rowwise() += adapter.bias.transpose();
  p.norms = p.unit.rowwise().norm();
  for (Eigen::Index i = 0; i < p.norms.size(); ++i) {
    if (p.norms(i) < kZeroNormEpsilon) throw Error(Errc::ZeroVector, "adapter output has zero norm");
    p.unit.row(i) /= p.norms(i);
  }
  return p;
}

// Backward through z -> z/|z|: (I - u u^T) g / |z|, row by row.
RowMatrix normalization_backward(const RowMatrix& unit, const Eigen::VectorXd& norms, const RowMatrix& grad_unit) {
  RowMatrix out = grad_unit;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double radial = grad_unit.row(i).dot(unit.row(i));
    out.row(i) = (grad_unit.row(i) - radial * unit.row(i)) / norms(i);
  }
  return out;
}

}  // namespace

SimilarityMatrix similarity_matrix(const ContrastiveBatch& batch, double tau) {
  check_tau(tau);
  const std::size_t n = batch.group_a.size();
  if (batch.group_b.size() != n) throw Error(Errc::DimMismatch, "groups A and B differ in size");
  SimilarityMatrix m;
  m.tau = tau;
  m.s.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m.s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cosine_similarity(batch.group_a[i], batch.group_b[j]) / tau;
    }
  }
  return m;
}

double infonce_loss(const Eigen::MatrixXd& s) {
  if (s.rows() != s.cols() || s.rows() < 2) {
    throw Error(Errc::InsufficientData, "similarity matrix must be square with N >= 2");
  }
  const auto n = s.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total += log_sum_exp(s.row(i).transpose()) - s(i, i);
    total += log_sum_exp(s.col(i)) - s(i, i);
  }
  return total / (2.0 * static_cast<double>(n));
}

Eigen::MatrixXd infonce_loss_gradient(const Eigen::MatrixXd& s) {
  const auto n = s.rows();
  Eigen::MatrixXd row_soft(n, n);
  Eigen::MatrixXd col_soft(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lr = log_sum_exp(s.row(i).transpose());
    row_soft.row(i) = (s.row(i).array() - lr).exp();
    const double lc = log_sum_exp(s.col(i));
    col_soft.col(i) = (s.col(i).array() - lc).exp();
  }
  Eigen::MatrixXd g = row_soft + col_soft;
  g.diagonal().array() -= 2.0;
  return g / (2.0 * static_cast<double>(n));
}

LinearAdapter LinearAdapter::identity(Eigen::Index dim) {
  return {RowMatrix::Identity(dim, dim), Eigen::VectorXd::Zero(dim)};
}

UnitEmbedding LinearAdapter::embed(std::span<const double> raw) const {
  if (static_cast<Eigen::Index>(raw.size()) != dim_in()) {
    throw Error(Errc::DimMismatch, "raw feature dimension does not match adapter input");
  }
  const Eigen::Map<const Eigen::VectorXd> x(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const Eigen::VectorXd z = weight * x + bias;
  return normalize(std::span<const double>(z.data(), static_cast<std::size_t>(z.size())));
}

std::vector<UnitEmbedding> LinearAdapter::embed_rows(const RowMatrix& raw) const {
  std::vector<UnitEmbedding> out;
  out.reserve(static_cast<std::size_t>(raw.rows()));
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    out.push_back(embed(std::span<const double>(raw.row(i).data(), static_cast<std::size_t>(raw.cols()))));
  }
  return out;
}

double adapter_loss(const RawPairBatch& batch, const LinearAdapter& adapter, double tau) {
  check_tau(tau);
  const Projected a = project(batch.a, adapter);
  const Projected b = project(batch.b, adapter);
  const Eigen::MatrixXd s = (a.unit * b.unit.transpose()) / tau;
  return infonce_loss(s);
}

LossAndGradient infonce_gradient(const RawPairBatch& batch, const LinearAdapter& adapter, double tau) {
  check_tau(tau);
  if (batch.a.rows() != batch.b.rows()) throw Error(Errc::DimMismatch, "groups A and B differ in size");
  const Projected a = project(batch.a, adapter);
  const Projected b = project(batch.b, adapter);
  const Eigen::MatrixXd s = (a.unit * b.unit.transpose()) / tau;

  LossAndGradient out;
  out.loss = infonce_loss(s);
  const Eigen::MatrixXd g = infonce_loss_gradient(s);

  const RowMatrix grad_unit_a = (g * b.unit) / tau;
  const RowMatrix grad_unit_b = (g.transpose() * a.unit) / tau;
  const RowMatrix grad_z_a = normalization_backward(a.unit, a.norms, grad_unit_a);
  const RowMatrix grad_z_b = normalization_backward(b.unit, b.norms, grad_unit_b);

  out.gradient.weight = grad_z_a.transpose() * batch.a + grad_z_b.transpose() * batch.b;
  out.gradient.bias = grad_z_a.colwise().sum().transpose() + grad_z_b.colwise().sum().transpose();
  return out;
}

std::vector<RawPairBatch> draw_pair_batches(const RawFeatureSet& data, const AdapterTrainConfig& config) {
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    by_class[data.labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  if (by_class.size() < 2) throw Error(Errc::InsufficientData, "contrastive training needs at least two classes");
  for (const auto& [label, rows] : by_class) {
    if (rows.size() < 2) {
      throw Error(Errc::InsufficientData, "class " + std::to_string(label) + " has fewer than two samples");
    }
  }

  std::mt19937_64 rng(config.seed);
  for (auto& [label, rows] : by_class) std::shuffle(rows.begin(), rows.end(), rng);

  // Round r takes the r-th (A, B) pair of every class, so a batch cut from one
  // round never holds the same class twice.
  const std::size_t n = std::max<std::size_t>(2, std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), by_class.size()));
  std::vector<RawPairBatch> batches;
  for (std::size_t round = 0;; ++round) {
    std::vector<std::pair<int, std::pair<Eigen::Index, Eigen::Index>>> pairs;
    for (const auto& [label, rows] : by_class) {
      if (2 * round + 1 < rows.size()) pairs.push_back({label, {rows[2 * round], rows[2 * round + 1]}});
    }
    if (pairs.size() < 2) break;
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (std::size_t start = 0; start + 2 <= pairs.size(); start += n) {
      const std::size_t len = std::min(n, pairs.size() - start);
      if (len < 2) break;
      RawPairBatch batch;
      batch.a.resize(static_cast<Eigen::Index>(len), data.features.cols());
      batch.b.resize(static_cast<Eigen::Index>(len), data.features.cols());
      for (std::size_t k = 0; k < len; ++k) {
        const auto& [label, rows] = pairs[start + k];
        batch.a.row(static_cast<Eigen::Index>(k)) = data.features.row(rows.first);
        batch.b.row(static_cast<Eigen::Index>(k)) = data.features.row(rows.second);
        batch.class_ids.push_back(label);
      }
      batches.push_back(std::move(batch));
    }
  }
  return batches;
}

AdapterTrainResult train_adapter(const RawFeatureSet& data, const AdapterTrainConfig& config) {
  if (static_cast<std::size_t>(data.features.rows()) != data.labels.size()) {
    throw Error(Errc::DimMismatch, "one label per feature row required");
  }
  check_tau(config.tau);
  const auto batches = draw_pair_batches(data, config);

  auto evaluate = [&](const LinearAdapter& adapter, AdapterGradient* grad) {
    double loss = 0.0;
    if (grad) {
      grad->weight = RowMatrix::Zero(adapter.dim_out(), adapter.dim_in());
      grad->bias = Eigen::VectorXd::Zero(adapter.dim_out());
    }
    for (const auto& batch : batches) {
      if (grad) {
        const auto lg = infonce_gradient(batch, adapter, config.tau);
        loss += lg.loss;
        grad->weight += lg.gradient.weight;
        grad->bias += lg.gradient.bias;
      } else {
        loss += adapter_loss(batch, adapter, config.tau);
      }
    }
    const double scale = 1.0 / static_cast<double>(batches.size());
    if (grad) {
      grad->weight *= scale;
      grad->bias *= scale;
    }
    return loss * scale;
  };

  AdapterTrainResult result{LinearAdapter::identity(data.features.cols()), {}};
  AdapterGradient grad;
  double loss = evaluate(result.adapter, &grad);
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    result.loss_trace.push_back(loss);
    if (lr == 0.0) continue;
    LinearAdapter trial{result.adapter.weight - lr * grad.weight, result.adapter.bias - lr * grad.bias};
    double trial_loss = 0.0;
    try {
      trial_loss = evaluate(trial, nullptr);
    } catch (const Error&) {
      trial_loss = loss + 1.0;  // collapsed output; treat as a rejected step
    }
    if (trial_loss <= loss) {
      result.adapter = std::move(trial);
      loss = evaluate(result.adapter, &grad);
    } else {
      lr *= 0.5;
    }
  }
  result.loss_trace.push_back(loss);
  return result;
}

}  // namespace lipcmd
