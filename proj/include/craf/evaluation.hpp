#pragma once

// Clustering and classification metrics.

#include "craf/common.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace craf {

/// Permutation-adjusted Rand index from the contingency table. Returns 1.0
/// when both labelings put every item in a single cluster.
double adjusted_rand_index(std::span<const int> pred, std::span<const int> truth);

struct F1Report {
  double macro_f1 = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  std::array<double, 3> f1{};
  std::array<bool, 3> counted{};  // class present in pred or truth
};

/// Macro F1 over the three sentiment classes. Classes absent from both
/// labelings are excluded from the mean.
F1Report macro_f1_report(std::span<const int> pred, std::span<const int> truth);
double macro_f1(std::span<const int> pred, std::span<const int> truth);

double accuracy(std::span<const int> pred, std::span<const int> truth);

enum class ClusterMatching { greedy, hungarian };

/// Mean Jaccard over matched clusters of two clusterings of the same items.
double clustering_jaccard(std::span<const int> a, std::span<const int> b, ClusterMatching matching = ClusterMatching::greedy);

/// K x K matrix of clustering_jaccard between every pair; unit diagonal.
Matrix cross_platform_jaccard(const std::vector<std::vector<int>>& clusterings,
                              ClusterMatching matching = ClusterMatching::greedy);

/// Maximum-weight assignment on a rectangular weight matrix; returns the
/// column chosen for each row, or -1.
std::vector<int> hungarian_max(const Matrix& weights);

struct MetricReport {
  double ari = 0.0;
  double macro_f1 = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
  Matrix jaccard;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string config_hash;

  nlohmann::json to_json() const;
};

}  // namespace craf
