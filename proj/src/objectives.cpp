#include "craf/objectives.hpp"

#include <cmath>

namespace craf {

void LossWeights::validate() const {
  if (topic < 0 || sentiment < 0 || consistency < 0 || regularization < 0)
    throw ConfigError("loss weights must be nonnegative");
  if (topic == 0 && sentiment == 0 && consistency == 0 && regularization == 0)
    throw ConfigError("at least one loss weight must be positive");
}

ad::Var topic_distribution_graph(const ad::Var& z, const ad::Var& centroids) {
  ad::Var kernel = ad::reciprocal(ad::add_scalar(ad::pairwise_sq_dist(z, centroids), 1.0));
  return ad::div_col(kernel, ad::row_sum(kernel));
}

ad::Var sentiment_probs_graph(const ad::Var& z, const ad::Var& weight, const ad::Var& bias) {
  return ad::row_softmax(ad::add_row(ad::matmul_nt(z, weight), bias));
}

namespace {

ad::Var entropy_rows(const ad::Var& dist) {
  // -sum_c p log p per row, n x 1
  return ad::scale(ad::row_sum(ad::mul(dist, ad::log(dist, kLogFloor))), -1.0);
}

Matrix floored_log(const Matrix& m) {
  return m.unaryExpr([](double x) { return std::log(x < kLogFloor ? kLogFloor : x); });
}

}  // namespace

ad::Var topic_loss_graph(const ad::Var& Q, const Matrix& P, double entropy_gamma, EntropyMode mode) {
  ad::Tape& tape = *Q.tape();
  const double n = static_cast<double>(Q.rows());
  ad::Var log_p = tape.constant(floored_log(P));
  ad::Var kl = ad::scale(ad::sum(ad::mul(Q, ad::sub(ad::log(Q, kLogFloor), log_p))), 1.0 / n);
  if (entropy_gamma == 0.0) return kl;
  ad::Var entropy = mode == EntropyMode::batch_mean ? ad::sum(entropy_rows(ad::col_mean(Q)))
                                                    : ad::mean(entropy_rows(Q));
  return ad::add(kl, ad::scale(entropy, entropy_gamma));
}

ad::Var focal_loss_graph(const ad::Var& probs, std::span<const int> labels, double gamma) {
  ad::Var p = ad::pick(probs, labels);
  ad::Var weight = ad::pow(ad::add_scalar(ad::scale(p, -1.0), 1.0), gamma);
  return ad::scale(ad::mean(ad::mul(weight, ad::log(p, kLogFloor))), -1.0);
}

ad::Var js_rows_graph(const ad::Var& dist, std::span<const int> first, std::span<const int> second) {
  ad::Var a = ad::gather_rows(dist, first);
  ad::Var b = ad::gather_rows(dist, second);
  ad::Var log_m = ad::log(ad::scale(ad::add(a, b), 0.5), kLogFloor);
  ad::Var kl_a = ad::row_sum(ad::mul(a, ad::sub(ad::log(a, kLogFloor), log_m)));
  ad::Var kl_b = ad::row_sum(ad::mul(b, ad::sub(ad::log(b, kLogFloor), log_m)));
  return ad::scale(ad::add(kl_a, kl_b), 0.5);
}

ad::Var consistency_loss_graph(const ad::Var& Z, const ad::Var& Q, const ad::Var& S) {
  ad::Tape& tape = *Z.tape();
  const auto n = static_cast<int>(Z.rows());
  if (n < 2) return tape.constant(Matrix::Zero(1, 1));
  std::vector<int> first, second;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      first.push_back(i);
      second.push_back(j);
    }
  ad::Var divergence = ad::add(js_rows_graph(Q, first, second), js_rows_graph(S, first, second));
  ad::Var w = ad::exp(ad::scale(divergence, -1.0));
  ad::Var dist = ad::row_sum(ad::square(ad::sub(ad::gather_rows(Z, first), ad::gather_rows(Z, second))));
  return ad::scale(ad::sum(ad::mul(w, dist)), 2.0 / (static_cast<double>(n) * (n - 1)));
}

ad::Var l2_regularization_graph(std::span<const ad::Var> weights) {
  ad::Var total;
  bool first = true;
  for (const auto& w : weights) {
    ad::Var term = ad::sum(ad::square(w));
    total = first ? term : ad::add(total, term);
    first = false;
  }
  return total;
}

LossBreakdown LossVars::values() const {
  LossBreakdown b;
  b.topic = topic.scalar();
  b.sentiment = sentiment.scalar();
  b.consistency = consistency.scalar();
  b.regularization = regularization.scalar();
  b.total = total.scalar();
  b.weights = weights;
  return b;
}

LossVars total_loss_graph(const ad::Var& Z, const ad::Var& Q, const Matrix& P, const ad::Var& S,
                          std::span<const int> sentiment_labels, std::span<const ad::Var> weights,
                          const LossConfig& config) {
  config.weights.validate();
  ad::Tape& tape = *Z.tape();
  const auto zero = [&] { return tape.constant(Matrix::Zero(1, 1)); };
  LossVars out;
  out.weights = config.weights;
  out.topic = topic_loss_graph(Q, P, config.entropy_gamma, config.entropy_mode);

  std::vector<int> rows, labels;
  for (std::size_t i = 0; i < sentiment_labels.size(); ++i)
    if (sentiment_labels[i] >= 0) {
      rows.push_back(static_cast<int>(i));
      labels.push_back(sentiment_labels[i]);
    }
  out.sentiment = rows.empty() ? zero() : focal_loss_graph(ad::gather_rows(S, rows), labels, config.focal_gamma);
  out.consistency = consistency_loss_graph(Z, Q, S);
  out.regularization = weights.empty() ? zero() : l2_regularization_graph(weights);

  const auto& w = config.weights;
  out.total = ad::add(ad::add(ad::scale(out.topic, w.topic), ad::scale(out.sentiment, w.sentiment)),
                      ad::add(ad::scale(out.consistency, w.consistency), ad::scale(out.regularization, w.regularization)));
  return out;
}

// Value-level wrappers evaluate the graph on constants.

namespace {
Matrix as_row(const Vector& v) { return v.transpose(); }
}  // namespace

Vector topic_distribution(const TopicHead& head, const Vector& z) {
  ad::Tape tape;
  return topic_distribution_graph(tape.constant(as_row(z)), tape.constant(head.centroids)).value().row(0).transpose();
}

Matrix target_distribution(const Matrix& Q) {
  const Eigen::RowVectorXd f = Q.colwise().sum();
  Matrix P = Matrix::Zero(Q.rows(), Q.cols());
  for (Eigen::Index c = 0; c < Q.cols(); ++c) {
    if (f(c) <= 0.0) {
      warn("target distribution: cluster " + std::to_string(c) + " has zero frequency; excluded");
      continue;
    }
    P.col(c) = Q.col(c).array().square() / f(c);
  }
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    const double s = P.row(i).sum();
    if (s > 0.0) P.row(i) /= s;
  }
  return P;
}

double topic_loss(const Matrix& Q, const Matrix& P, double entropy_gamma, EntropyMode mode) {
  ad::Tape tape;
  return topic_loss_graph(tape.constant(Q), P, entropy_gamma, mode).scalar();
}

Vector sentiment_probs(const SentimentHead& head, const Vector& z) {
  ad::Tape tape;
  return sentiment_probs_graph(tape.constant(as_row(z)), tape.constant(head.weight), tape.constant(head.bias))
      .value()
      .row(0)
      .transpose();
}

double focal_loss(const Matrix& probs, std::span<const int> labels, double gamma) {
  ad::Tape tape;
  return focal_loss_graph(tape.constant(probs), labels, gamma).scalar();
}

double js_divergence(const Vector& p, const Vector& q) {
  ad::Tape tape;
  Matrix rows(2, p.size());
  rows.row(0) = p.transpose();
  rows.row(1) = q.transpose();
  const int a[] = {0};
  const int b[] = {1};
  return js_rows_graph(tape.constant(rows), a, b).scalar();
}

double consistency_loss(const Matrix& Z, const Matrix& Q, const Matrix& S) {
  if (Z.rows() < 2) {
    warn("consistency loss: fewer than 2 items; returning 0");
    return 0.0;
  }
  ad::Tape tape;
  return consistency_loss_graph(tape.constant(Z), tape.constant(Q), tape.constant(S)).scalar();
}

double l2_regularization(std::span<const Matrix* const> weights) {
  double total = 0.0;
  for (const Matrix* w : weights) total += w->squaredNorm();
  return total;
}

LossBreakdown total_loss(const Matrix& Z, const Matrix& Q, const Matrix& P, const Matrix& S,
                         std::span<const int> sentiment_labels, std::span<const Matrix* const> weights,
                         const LossConfig& config) {
  ad::Tape tape;
  std::vector<ad::Var> w;
  for (const Matrix* m : weights) w.push_back(tape.constant(*m));
  return total_loss_graph(tape.constant(Z), tape.constant(Q), P, tape.constant(S), sentiment_labels, w, config)
      .values();
}

}  // namespace craf
