#pragma once

// Task heads and the four terms of the joint objective:
//   total = l_topic * topic + l_sent * sentiment + l_cons * consistency + l_reg * R
//
// topic:       mean_i KL(q_i || p_i) + gamma_ent * H(mean_i q_i)
// sentiment:   mean_i (1 - p_{i,y_i})^gamma * -log p_{i,y_i}  (labeled rows only)
// consistency: mean_{i<j} w_ij ||z_i - z_j||^2,  w_ij = exp(-JS(q_i, q_j) - JS(s_i, s_j))
// R:           sum of squared entries of every weight matrix

#include "craf/autodiff.hpp"
#include "craf/common.hpp"

#include <span>
#include <vector>

namespace craf {

inline constexpr double kLogFloor = 1e-12;

struct TopicHead {
  Matrix centroids;  // C x d'
};

struct SentimentHead {
  Matrix weight;  // 3 x d'
  Matrix bias;    // 1 x 3
};

enum class EntropyMode {
  batch_mean,  // H of the batch-mean assignment
  per_row,     // mean over rows of H(q_i)
};

struct LossWeights {
  double topic = 1.0;
  double sentiment = 1.0;
  double consistency = 0.1;
  double regularization = 1e-4;

  /// Throws ConfigError on negative weights or when all are zero.
  void validate() const;
};

struct LossConfig {
  LossWeights weights;
  double focal_gamma = 2.0;
  double entropy_gamma = -0.1;
  EntropyMode entropy_mode = EntropyMode::batch_mean;
};

struct LossBreakdown {
  double topic = 0.0;
  double sentiment = 0.0;
  double consistency = 0.0;
  double regularization = 0.0;
  double total = 0.0;
  LossWeights weights;
};

// Value-level API.

/// Student-t (one degree of freedom) soft assignment of z to each centroid.
Vector topic_distribution(const TopicHead& head, const Vector& z);
/// Sharpened targets p_ic ∝ q_ic^2 / f_c with f_c = sum_i q_ic. Columns with f_c = 0 are
/// dropped (zero in P) with a warning.
Matrix target_distribution(const Matrix& Q);
double topic_loss(const Matrix& Q, const Matrix& P, double entropy_gamma, EntropyMode mode = EntropyMode::batch_mean);
Vector sentiment_probs(const SentimentHead& head, const Vector& z);
double focal_loss(const Matrix& probs, std::span<const int> labels, double gamma);
double js_divergence(const Vector& p, const Vector& q);
double consistency_loss(const Matrix& Z, const Matrix& Q, const Matrix& S);
double l2_regularization(std::span<const Matrix* const> weights);

/// `sentiment_labels[i] < 0` marks an unlabeled row, which only feeds the topic
/// and consistency terms.
LossBreakdown total_loss(const Matrix& Z, const Matrix& Q, const Matrix& P, const Matrix& S,
                         std::span<const int> sentiment_labels, std::span<const Matrix* const> weights,
                         const LossConfig& config);

// Graph-level API.

ad::Var topic_distribution_graph(const ad::Var& z, const ad::Var& centroids);
ad::Var sentiment_probs_graph(const ad::Var& z, const ad::Var& weight, const ad::Var& bias);
ad::Var topic_loss_graph(const ad::Var& Q, const Matrix& P, double entropy_gamma, EntropyMode mode);
/// `labels` must all be valid class indices; the caller selects labeled rows.
ad::Var focal_loss_graph(const ad::Var& probs, std::span<const int> labels, double gamma);
/// JS divergence between rows `first[k]` and `second[k]` of `dist`, as a column.
ad::Var js_rows_graph(const ad::Var& dist, std::span<const int> first, std::span<const int> second);
ad::Var consistency_loss_graph(const ad::Var& Z, const ad::Var& Q, const ad::Var& S);
ad::Var l2_regularization_graph(std::span<const ad::Var> weights);

struct LossVars {
  ad::Var topic, sentiment, consistency, regularization, total;
  LossBreakdown values() const;
  LossWeights weights;
};

LossVars total_loss_graph(const ad::Var& Z, const ad::Var& Q, const Matrix& P, const ad::Var& S,
                          std::span<const int> sentiment_labels, std::span<const ad::Var> weights,
                          const LossConfig& config);

}  // namespace craf
