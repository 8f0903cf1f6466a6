#include "craf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace craf {

namespace {

double choose2(double n) { return n * (n - 1.0) / 2.0; }

std::vector<int> compact(std::span<const int> labels, int& count) {
  std::map<int, int> ids;
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(ids.try_emplace(l, static_cast<int>(ids.size())).first->second);
  count = static_cast<int>(ids.size());
  return out;
}

}  // namespace

double adjusted_rand_index(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ConfigError("adjusted_rand_index: label vectors differ in length");
  if (pred.size() < 2) throw ConfigError("adjusted_rand_index: need at least 2 items");
  int rows = 0, cols = 0;
  const auto a = compact(pred, rows);
  const auto b = compact(truth, cols);
  std::vector<double> table(static_cast<std::size_t>(rows * cols), 0.0), row_sum(static_cast<std::size_t>(rows), 0.0),
      col_sum(static_cast<std::size_t>(cols), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[static_cast<std::size_t>(a[i] * cols + b[i])] += 1.0;
    row_sum[static_cast<std::size_t>(a[i])] += 1.0;
    col_sum[static_cast<std::size_t>(b[i])] += 1.0;
  }
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (double v : table) index += choose2(v);
  for (double v : row_sum) sum_a += choose2(v);
  for (double v : col_sum) sum_b += choose2(v);
  const double total = choose2(static_cast<double>(a.size()));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;  // both labelings trivial in the same way
  return (index - expected) / (max_index - expected);
}

F1Report macro_f1_report(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw ConfigError("macro_f1: label vectors differ in length");
  if (pred.empty()) throw ConfigError("macro_f1: empty input");
  std::array<double, 3> tp{}, fp{}, fn{};
  std::array<bool, 3> seen{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], t = truth[i];
    if (p < 0 || p > 2 || t < 0 || t > 2) throw ConfigError("macro_f1: labels must be sentiment classes 0..2");
    seen[static_cast<std::size_t>(p)] = seen[static_cast<std::size_t>(t)] = true;
    if (p == t) tp[static_cast<std::size_t>(p)] += 1;
    else {
      fp[static_cast<std::size_t>(p)] += 1;
      fn[static_cast<std::size_t>(t)] += 1;
    }
  }
  F1Report r;
  double total = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    r.counted[c] = seen[c];
    r.precision[c] = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    r.recall[c] = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    r.f1[c] = r.precision[c] + r.recall[c] > 0 ? 2 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c]) : 0.0;
    if (seen[c]) {
      total += r.f1[c];
      ++counted;
    }
  }
  r.macro_f1 = total / counted;
  return r;
}

double macro_f1(std::span<const int> pred, std::span<const int> truth) { return macro_f1_report(pred, truth).macro_f1; }

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size() || pred.empty()) throw ConfigError("accuracy: need equal nonempty label vectors");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<int> hungarian_max(const Matrix& weights) {
  // Square-padded Kuhn-Munkres on costs (max - w), O(n^3).
  const auto rows = static_cast<int>(weights.rows());
  const auto cols = static_cast<int>(weights.cols());
  const int n = std::max(rows, cols);
  const double top = weights.size() ? weights.maxCoeff() : 0.0;
  Matrix cost = Matrix::Constant(n, n, top);
  cost.topLeftCorner(rows, cols) = (top - weights.array()).matrix();
  cost.bottomRows(n - rows).setZero();
  cost.rightCols(n - cols).setZero();

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1)), v(static_cast<std::size_t>(n + 1));
  std::vector<int> p(static_cast<std::size_t>(n + 1)), way(static_cast<std::size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<std::size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) assignment[static_cast<std::size_t>(i - 1)] = j - 1;
  }
  return assignment;
}

double clustering_jaccard(std::span<const int> a, std::span<const int> b, ClusterMatching matching) {
  if (a.size() != b.size()) throw ConfigError("jaccard: clusterings cover different item counts");
  if (a.empty()) throw ConfigError("jaccard: empty clustering");
  int na = 0, nb = 0;
  const auto ca = compact(a, na);
  const auto cb = compact(b, nb);
  Matrix overlap = Matrix::Zero(na, nb);
  std::vector<double> size_a(static_cast<std::size_t>(na), 0.0), size_b(static_cast<std::size_t>(nb), 0.0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    overlap(ca[i], cb[i]) += 1.0;
    size_a[static_cast<std::size_t>(ca[i])] += 1.0;
    size_b[static_cast<std::size_t>(cb[i])] += 1.0;
  }
  auto jaccard = [&](int x, int y) {
    const double inter = overlap(x, y);
    return inter / (size_a[static_cast<std::size_t>(x)] + size_b[static_cast<std::size_t>(y)] - inter);
  };

  std::vector<std::pair<int, int>> pairs;
  if (matching == ClusterMatching::hungarian) {
    const auto assignment = hungarian_max(overlap);
    for (int x = 0; x < na; ++x) {
      const int y = assignment[static_cast<std::size_t>(x)];
      if (y >= 0 && overlap(x, y) > 0) pairs.emplace_back(x, y);
    }
  } else {
    std::vector<char> used_a(static_cast<std::size_t>(na), 0), used_b(static_cast<std::size_t>(nb), 0);
    while (true) {
      double best = 0.0;
      int bx = -1, by = -1;
      for (int x = 0; x < na; ++x) {
        if (used_a[static_cast<std::size_t>(x)]) continue;
        for (int y = 0; y < nb; ++y) {
          if (used_b[static_cast<std::size_t>(y)]) continue;
          if (overlap(x, y) > best) {
            best = overlap(x, y);
            bx = x;
            by = y;
          }
        }
      }
      if (bx < 0) break;
      used_a[static_cast<std::size_t>(bx)] = used_b[static_cast<std::size_t>(by)] = 1;
      pairs.emplace_back(bx, by);
    }
  }
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (auto [x, y] : pairs) total += jaccard(x, y);
  return total / static_cast<double>(pairs.size());
}

Matrix cross_platform_jaccard(const std::vector<std::vector<int>>& clusterings, ClusterMatching matching) {
  if (clusterings.empty()) throw ConfigError("cross_platform_jaccard: no clusterings");
  const auto K = static_cast<Eigen::Index>(clusterings.size());
  Matrix out = Matrix::Identity(K, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = k + 1; j < K; ++j) {
      const double v = clustering_jaccard(clusterings[static_cast<std::size_t>(k)], clusterings[static_cast<std::size_t>(j)], matching);
      out(k, j) = out(j, k) = v;
    }
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["ari"] = ari;
  j["macro_f1"] = macro_f1;
  j["precision"] = {{"pos", precision[0]}, {"neu", precision[1]}, {"neg", precision[2]}};
  j["recall"] = {{"pos", recall[0]}, {"neu", recall[1]}, {"neg", recall[2]}};
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < jaccard.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(jaccard.cols()));
    for (Eigen::Index c = 0; c < jaccard.cols(); ++c) row[static_cast<std::size_t>(c)] = jaccard(i, c);
    rows.push_back(std::move(row));
  }
  j["jaccard"] = std::move(rows);
  j["metadata"] = {{"dataset", dataset}, {"seed", seed}, {"config_hash", config_hash}};
  return j;
}

}  // namespace craf
