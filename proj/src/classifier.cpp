// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "lipcmd/error.hpp"

namespace lipcmd {

namespace {

// Weighted cross-entropy of the current parameters; fills `probs` (n x K).
double objective(const RowMatrix& x, const std::vector<int>& y, const Eigen::VectorXd& w,
                 const RowMatrix& weights, const Eigen::VectorXd& bias, double l2,
                 RowMatrix& probs) {
  probs.noalias() = x * weights.transpose();
  probs.rowwise() += bias.transpose();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    auto row = probs.row(i);
    const double m = row.maxCoeff();
    row.array() -= m;
    const double z_true = row(y[static_cast<std::size_t>(i)]);
    row = row.array().exp();
    const double s = row.sum();
    row /= s;
    loss += w(i) * (std::log(s) - z_true);
  }
  return loss + 0.5 * l2 * weights.squaredNorm();
}

void softmax_inplace(Eigen::Ref<Eigen::VectorXd> z) {
  z.array() -= z.maxCoeff();
  z = z.array().exp();
  z /= z.sum();
}

}  // namespace

RowMatrix stack_rows(std::span<const UnitEmbedding> rows) {
  if (rows.empty()) return RowMatrix(0, 0);
  const auto dim = static_cast<Eigen::Index>(rows.front().dim());
  RowMatrix x(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Eigen::Index>(rows[i].dim()) != dim) {
      throw Error(Errc::DimMismatch, "embeddings differ in dimension");
    }
    const auto v = rows[i].values();
    for (Eigen::Index j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), j) = v[static_cast<std::size_t>(j)];
  }
  return x;
}

LinearClassifier::LinearClassifier(std::vector<std::string> labels, RowMatrix weights,
                                   Eigen::VectorXd bias, std::size_t trained_on)
    : labels_(std::move(labels)),
      weights_(std::move(weights)),
      bias_(std::move(bias)),
      trained_on_(trained_on) {
  if (labels_.empty()) throw Error(Errc::InsufficientData, "classifier needs at least one label");
  if (static_cast<std::size_t>(weights_.rows()) != labels_.size() ||
      static_cast<std::size_t>(bias_.size()) != labels_.size()) {
    throw Error(Errc::DimMismatch, "classifier parameter shapes do not match label count");
  }
}

Eigen::VectorXd LinearClassifier::probabilities(const UnitEmbedding& e) const {
  if (e.dim() != dim()) {
    throw Error(Errc::DimMismatch, "query has dim " + std::to_string(e.dim()) + ", classifier expects " +
                                       std::to_string(dim()));
  }
  Eigen::VectorXd x(static_cast<Eigen::Index>(e.dim()));
  const auto v = e.values();
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i)) = v[i];
  Eigen::VectorXd z = weights_ * x + bias_;
  softmax_inplace(z);
  return z;
}

double LinearClassifier::probability_of(const UnitEmbedding& e, const std::string& label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw Error(Errc::UnknownLabel, "unknown label: " + label);
  return probabilities(e)(it - labels_.begin());
}

Prediction LinearClassifier::predict(const UnitEmbedding& e) const {
  const Eigen::VectorXd p = probabilities(e);
  std::vector<std::size_t> order(labels_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = p(static_cast<Eigen::Index>(a));
    const double pb = p(static_cast<Eigen::Index>(b));
    if (pa != pb) return pa > pb;
    return labels_[a] < labels_[b];
  });
  Prediction out;
  out.ranking.reserve(order.size());
  for (std::size_t k : order) out.ranking.push_back({labels_[k], p(static_cast<Eigen::Index>(k))});
  out.label = out.ranking.front().label;
  out.score = out.ranking.front().probability;
  return out;
}

std::vector<int> LinearClassifier::predict_indices(const RowMatrix& x) const {
  RowMatrix logits = x * weights_.transpose();
  logits.rowwise() += bias_.transpose();
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    // labels_ are sorted, so the first maximum is the lexicographic tie winner
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(i, k) > logits(i, best)) best = k;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

LinearClassifier fit_weighted(std::span<const LabeledSample> samples,
                              std::span<const double> sample_weights, const FitConfig& config) {
  if (samples.empty()) throw Error(Errc::InsufficientData, "no training samples");
  if (sample_weights.size() != samples.size()) {
    throw Error(Errc::DimMismatch, "one weight per sample required");
  }

  std::map<std::string, int> index;
  for (const auto& s : samples) {
    if (s.label.empty()) throw Error(Errc::EmptyLabel, "training sample has an empty label");
    index.emplace(s.label, 0);
  }
  if (index.size() < 2) throw Error(Errc::SingleClass, "need at least two classes to fit");
  std::vector<std::string> labels;
  for (auto& [label, k] : index) {
    k = static_cast<int>(labels.size());
    labels.push_back(label);
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto num_classes = static_cast<Eigen::Index>(labels.size());
  const auto dim = static_cast<Eigen::Index>(samples.front().embedding.dim());

  RowMatrix x(n, dim);
  std::vector<int> y(samples.size());
  Eigen::VectorXd w(n);
  double weight_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(s.embedding.dim()) != dim) {
      throw Error(Errc::DimMismatch, "training samples differ in dimension");
    }
    const auto v = s.embedding.values();
    for (Eigen::Index j = 0; j < dim; ++j) x(i, j) = v[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = index.at(s.label);
    w(i) = sample_weights[static_cast<std::size_t>(i)];
    weight_sum += w(i);
  }
  if (!(weight_sum > 0.0)) throw Error(Errc::InsufficientData, "sample weights sum to zero");
  w /= weight_sum;

  RowMatrix weights = RowMatrix::Zero(num_classes, dim);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(num_classes);
  RowMatrix probs(n, num_classes);
  double loss = objective(x, y, w, weights, bias, config.l2, probs);

  RowMatrix trial_weights(num_classes, dim);
  Eigen::VectorXd trial_bias(num_classes);
  RowMatrix trial_probs(n, num_classes);
  RowMatrix residual(n, num_classes);
  double lr = config.learning_rate;
  int iter = 0;
  for (; iter < config.max_iters; ++iter) {
    // residual = diag(w) (P - Y)
    residual = probs;
    for (Eigen::Index i = 0; i < n; ++i) residual(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    residual = w.asDiagonal() * residual;
    const RowMatrix grad_w = residual.transpose() * x + config.l2 * weights;
    const Eigen::VectorXd grad_b = residual.colwise().sum().transpose();

    bool accepted = false;
    double next_loss = loss;
    while (iter < config.max_iters) {
      trial_weights = weights - lr * grad_w;
      trial_bias = bias - lr * grad_b;
      next_loss = objective(x, y, w, trial_weights, trial_bias, config.l2, trial_probs);
      if (next_loss <= loss) {
        accepted = true;
        break;
      }
      lr *= 0.5;
      ++iter;
    }
    if (!accepted) break;
    weights.swap(trial_weights);
    bias.swap(trial_bias);
    probs.swap(trial_probs);
    const double change = loss - next_loss;
    loss = next_loss;
    if (change < config.tol) {
      ++iter;
      break;
    }
  }

  LinearClassifier clf(std::move(labels), std::move(weights), std::move(bias), samples.size());
  clf.iterations_ = iter;
  clf.final_loss_ = loss;
  return clf;
}

LinearClassifier fit(std::span<const LabeledSample> samples, const FitConfig& config) {
  const std::vector<double> ones(samples.size(), 1.0);
  return fit_weighted(samples, ones, config);
}

LinearClassifier fit_binary_kws(std::span<const UnitEmbedding> positives,
                                std::span<const UnitEmbedding> negatives, const FitConfig& config) {
  if (positives.empty() || negatives.empty()) {
    throw Error(Errc::InsufficientData, "keyword model needs at least one positive and one negative");
  }
  std::vector<LabeledSample> samples;
  std::vector<double> weights;
  samples.reserve(positives.size() + negatives.size());
  const double pos_w = 1.0 / static_cast<double>(positives.size());
  const double neg_w = 1.0 / static_cast<double>(negatives.size());
  for (const auto& e : positives) {
    samples.push_back({e, kKeywordClass, std::nullopt, 0});
    weights.push_back(pos_w);
  }
  for (const auto& e : negatives) {
    samples.push_back({e, kNegativeClass, std::nullopt, 0});
    weights.push_back(neg_w);
  }
  return fit_weighted(samples, weights, config);
}

}  // namespace lipcmd
