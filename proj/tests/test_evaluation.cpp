#include <doctest.h>

#include "craf/evaluation.hpp"
#include "support.hpp"

#include <cmath>

using namespace craf;

namespace {

// Rand index adjusted by the permutation model, from explicit pair enumeration.
double brute_force_ari(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = a.size();
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  const double expected = in_a * in_b / pairs;
  const double top = 0.5 * (in_a + in_b);
  if (top == expected) return 1.0;
  return (both - expected) / (top - expected);
}

}  // namespace

TEST_CASE("ARI endpoints") {
  const std::vector<int> truth{0, 0, 1, 1, 2, 2};
  CHECK(adjusted_rand_index(truth, truth) == 1.0);
  const std::vector<int> relabeled{5, 5, 3, 3, 9, 9};
  CHECK(adjusted_rand_index(relabeled, truth) == 1.0);
  const std::vector<int> one(4, 0), halves{0, 0, 1, 1};
  CHECK(adjusted_rand_index(one, halves) == 0.0);
  CHECK(adjusted_rand_index(one, one) == 1.0);
  CHECK_THROWS_AS(adjusted_rand_index(std::vector<int>{0}, std::vector<int>{0}), ConfigError);
  CHECK_THROWS_AS(adjusted_rand_index(one, truth), ConfigError);
}

TEST_CASE("ARI agrees with pair enumeration") {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> a(8), b(8);
    for (auto& x : a) x = static_cast<int>(rng.index(3));
    for (auto& x : b) x = static_cast<int>(rng.index(4));
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(brute_force_ari(a, b)).epsilon(1e-12));
    const double v = adjusted_rand_index(a, b);
    CHECK(v >= -0.5);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("macro F1 hand cases") {
  const std::vector<int> truth{0, 1, 2, 0, 1, 2};
  CHECK(macro_f1(truth, truth) == 1.0);
  const std::vector<int> neutral(6, 1);
  // Class 1: precision 2/6, recall 1 -> F1 0.5; classes 0 and 2 score 0.
  CHECK(macro_f1(neutral, truth) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  const auto r = macro_f1_report(neutral, truth);
  CHECK(r.f1[1] == doctest::Approx(0.5));
  CHECK(r.f1[0] == 0.0);

  // A class absent from both labelings is excluded.
  const std::vector<int> two{0, 0, 1, 1}, guess{0, 1, 1, 1};
  const auto partial = macro_f1_report(guess, two);
  CHECK_FALSE(partial.counted[2]);
  CHECK(partial.macro_f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0));

  CHECK_THROWS_AS(macro_f1(std::vector<int>{}, std::vector<int>{}), ConfigError);
  CHECK_THROWS_AS(macro_f1(std::vector<int>{3}, std::vector<int>{0}), ConfigError);
}

TEST_CASE("macro F1 is invariant under joint permutation") {
  Rng rng(2);
  std::vector<int> p(30), t(30);
  for (auto& x : p) x = static_cast<int>(rng.index(3));
  for (auto& x : t) x = static_cast<int>(rng.index(3));
  std::vector<std::size_t> order(30);
  for (std::size_t i = 0; i < 30; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> pp, tt;
  for (auto i : order) {
    pp.push_back(p[i]);
    tt.push_back(t[i]);
  }
  CHECK(macro_f1(p, t) == doctest::Approx(macro_f1(pp, tt)).epsilon(1e-15));
}

TEST_CASE("accuracy") {
  CHECK(accuracy(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 1, 2}) == 0.75);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), ConfigError);
}

TEST_CASE("Jaccard of identical clusterings") {
  const std::vector<std::vector<int>> same{{0, 0, 1, 1, 2}, {0, 0, 1, 1, 2}, {7, 7, 3, 3, 1}};
  const Matrix j = cross_platform_jaccard(same);
  CHECK((j.array() == 1.0).all());
}

TEST_CASE("Jaccard with one swapped document") {
  const std::vector<int> a{0, 0, 0, 1, 1, 1};
  // Documents 2 and 3 trade clusters: {0,1,3} vs {0,1,2} and {2,4,5} vs {3,4,5}, each 2 of 4.
  const std::vector<int> swapped{0, 0, 1, 0, 1, 1};
  CHECK(clustering_jaccard(a, swapped) == doctest::Approx(0.5).epsilon(1e-15));
  // Document 2 moves: {0,1} vs {0,1,2} is 2/3, {2,3,4,5} vs {3,4,5} is 3/4.
  const std::vector<int> moved{0, 0, 1, 1, 1, 1};
  CHECK(clustering_jaccard(a, moved) == doctest::Approx((2.0 / 3.0 + 0.75) / 2.0).epsilon(1e-15));
  CHECK(clustering_jaccard(a, moved, ClusterMatching::hungarian) == doctest::Approx((2.0 / 3.0 + 0.75) / 2.0));

  const Matrix m = cross_platform_jaccard({a, swapped, moved});
  CHECK(m(0, 1) == doctest::Approx(0.5));
  CHECK(m(1, 0) == m(0, 1));
  CHECK(m(1, 1) == 1.0);
}

TEST_CASE("Jaccard of disjoint co-clustering is near zero") {
  std::vector<int> rows, cols;
  for (int i = 0; i < 100; ++i) {
    rows.push_back(i / 10);
    cols.push_back(i % 10);
  }
  const Matrix m = cross_platform_jaccard({rows, cols});
  CHECK(m(0, 1) < 0.1);
  CHECK(m(0, 1) == doctest::Approx(1.0 / 19.0));
}

TEST_CASE("Jaccard errors") {
  CHECK_THROWS_AS(clustering_jaccard(std::vector<int>{}, std::vector<int>{}), ConfigError);
  CHECK_THROWS_AS(clustering_jaccard(std::vector<int>{1}, std::vector<int>{1, 2}), ConfigError);
}

TEST_CASE("Hungarian assignment beats greedy where greedy is suboptimal") {
  Matrix w(2, 2);
  w << 3, 2, 2, 0;
  const auto best = hungarian_max(w);
  CHECK(best == std::vector<int>{1, 0});
  Matrix wide(2, 3);
  wide << 1, 5, 1, 4, 1, 1;
  CHECK(hungarian_max(wide) == std::vector<int>{1, 0});
  Matrix tall(3, 1);
  tall << 1, 3, 2;
  CHECK(hungarian_max(tall) == std::vector<int>{-1, 0, -1});
}

TEST_CASE("metric report serializes") {
  MetricReport r;
  r.ari = 0.5;
  r.macro_f1 = 0.25;
  r.jaccard = Matrix::Identity(2, 2);
  r.dataset = "d";
  r.seed = 3;
  r.config_hash = "abc";
  const auto j = r.to_json();
  CHECK(j.at("ari").get<double>() == 0.5);
  CHECK(j.at("macro_f1").get<double>() == 0.25);
  CHECK(j.at("metadata").at("seed").get<std::uint64_t>() == 3u);
  CHECK(j.at("metadata").at("config_hash") == "abc");
  CHECK(j.at("jaccard").size() == 2u);
}
