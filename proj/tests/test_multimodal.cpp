#include <doctest.h>

#include "craf/multimodal.hpp"
#include "oracle.hpp"
#include "support.hpp"

#include <cmath>

using namespace craf;

namespace {

MultimodalParams seeded_params(std::uint64_t seed, int d_s = 6, int d_shared = 4) {
  Rng rng(seed);
  return MultimodalParams::init(d_s, d_shared, 5, rng);
}

ModalityBundle bundle_of(const std::vector<Vector>& vs, std::array<bool, 3> present) {
  ModalityBundle b;
  for (int m = 0; m < 3; ++m) b.vectors[m] = vs[static_cast<std::size_t>(m)];
  b.present = present;
  return b;
}

// Loop oracle: query W_q (h + c)/2, keys W_k h_j, values W_v h_j over present j.
Vector attend_oracle(const MultimodalParams& p, const Vector& h, const ModalityBundle& b) {
  std::vector<Vector> members;
  for (int m = 0; m < 3; ++m)
    if (b.present[m]) members.push_back(b.vectors[m]);
  Vector ctx = Vector::Zero(h.size());
  for (const auto& v : members) ctx += v / static_cast<double>(members.size());
  const Vector q = oracle::matvec(p.query, (h + ctx) / 2.0);
  Vector scores(static_cast<Eigen::Index>(members.size()));
  for (std::size_t j = 0; j < members.size(); ++j) {
    const Vector k = oracle::matvec(p.key, members[j]);
    double s = 0;
    for (Eigen::Index i = 0; i < k.size(); ++i) s += q(i) * k(i);
    scores(static_cast<Eigen::Index>(j)) = s / std::sqrt(static_cast<double>(q.size()));
  }
  const Vector a = oracle::softmax(scores);
  Vector out = Vector::Zero(p.value.rows());
  for (std::size_t j = 0; j < members.size(); ++j) out += a(static_cast<Eigen::Index>(j)) * oracle::matvec(p.value, members[j]);
  return out;
}

double cosine(const Vector& a, const Vector& b) {
  double ab = 0, aa = 0, bb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  return ab / std::sqrt(aa * bb);
}

// Straight-line InfoNCE bound: ln n + mean_i log softmax_i(cos(fx_i, fy_.) / tau)_i.
double infonce_oracle(const Matrix& fx, const Matrix& fy, double tau) {
  const auto n = fx.rows();
  double s = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector row(n);
    for (Eigen::Index j = 0; j < n; ++j) row(j) = cosine(fx.row(i).transpose(), fy.row(j).transpose()) / tau;
    s += std::log(oracle::softmax(row)(i));
  }
  return std::log(static_cast<double>(n)) + s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("modality weights renormalize over present modalities") {
  MultimodalParams p = seeded_params(1);
  p.raw_weights << std::log(2.0), 0.0, 0.0;
  const std::vector<Vector> vs(3, Vector::Ones(6));
  const auto all = modality_weights(p, bundle_of(vs, {true, true, true}));
  CHECK(all[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(all[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::abs(all[0] + all[1] + all[2] - 1.0) < 1e-12);
  const auto two = modality_weights(p, bundle_of(vs, {false, true, true}));
  CHECK(two[0] == 0.0);
  CHECK(two[1] == doctest::Approx(0.5));
  const auto one = modality_weights(p, bundle_of(vs, {true, false, false}));
  CHECK(one[0] == 1.0);
}

TEST_CASE("cross attention trivial cases") {
  const MultimodalParams p = seeded_params(2);
  Rng rng(3);
  const Vector a = test::random_vector(6, rng), b = test::random_vector(6, rng), c = test::random_vector(6, rng);
  const ModalityBundle single = bundle_of({a, b, c}, {true, false, false});
  CHECK((cross_modal_attention(p, a, single) - p.value * a).cwiseAbs().maxCoeff() < 1e-14);

  // Two identical keys split attention evenly.
  const ModalityBundle twins = bundle_of({a, a, c}, {true, true, false});
  CHECK((cross_modal_attention(p, c, twins) - p.value * a).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("cross attention and alignment match the loop oracle") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MultimodalParams p = seeded_params(10 + seed);
    Rng rng(seed);
    const std::vector<Vector> vs{test::random_vector(6, rng), test::random_vector(6, rng), test::random_vector(6, rng)};
    const ModalityBundle b = bundle_of(vs, {true, true, true});
    for (int m = 0; m < 3; ++m)
      CHECK((cross_modal_attention(p, vs[static_cast<std::size_t>(m)], b) - attend_oracle(p, vs[static_cast<std::size_t>(m)], b))
                .cwiseAbs()
                .maxCoeff() < 1e-12);

    p.raw_weights << std::log(2.0), 0.0, 0.0;
    const Vector expected =
        0.5 * attend_oracle(p, vs[0], b) + 0.25 * attend_oracle(p, vs[1], b) + 0.25 * attend_oracle(p, vs[2], b);
    CHECK((align_multimodal(p, b) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("alignment trivial and symmetric cases") {
  MultimodalParams p = seeded_params(4);
  Rng rng(5);
  const Vector a = test::random_vector(6, rng), c = test::random_vector(6, rng);
  const ModalityBundle only_text = bundle_of({a, c, c}, {true, false, false});
  CHECK((align_multimodal(p, only_text) - cross_modal_attention(p, a, only_text)).cwiseAbs().maxCoeff() < 1e-15);

  const ModalityBundle same = bundle_of({a, a, a}, {true, true, true});
  const Vector h = align_multimodal(p, same);
  CHECK((h - cross_modal_attention(p, a, same)).cwiseAbs().maxCoeff() < 1e-14);

  // Permuting identical inputs across modalities permutes nothing in the output.
  p.raw_weights << 0.3, -0.2, 0.7;
  const Vector b = test::random_vector(6, rng);
  const ModalityBundle one = bundle_of({a, b, b}, {true, true, true});
  Matrix w = p.raw_weights;
  p.raw_weights << 0.3, 0.7, -0.2;
  const Vector swapped = align_multimodal(p, bundle_of({a, b, b}, {true, true, true}));
  p.raw_weights = w;
  CHECK((align_multimodal(p, one) - swapped).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("invalid bundles") {
  const MultimodalParams p = seeded_params(1);
  const std::vector<Vector> vs(3, Vector::Ones(6));
  CHECK_THROWS_AS(align_multimodal(p, bundle_of(vs, {false, false, false})), SchemaError);
  std::vector<Vector> bad = vs;
  bad[1](2) = std::nan("");
  CHECK_THROWS_AS(align_multimodal(p, bundle_of(bad, {true, true, false})), SchemaError);
  CHECK_NOTHROW(align_multimodal(p, bundle_of(bad, {true, false, true})));
}

TEST_CASE("stub modality encoders") {
  const HashedNgramEmbedder embedder(6);
  Rng rng(1);
  MultimodalParams p = MultimodalParams::init(6, 4, 3, rng);
  Document doc;
  doc.text = "storm warning issued";
  ModalityBundle b = encode_modalities(p, embedder, doc);
  CHECK(b.present == std::array<bool, 3>{true, false, false});
  doc.asr = "storm warning";
  doc.visual = std::vector<double>{1.0, -2.0, 0.5};
  b = encode_modalities(p, embedder, doc);
  CHECK(b.count() == 3);
  for (int m = 0; m < 3; ++m) CHECK(b.vectors[m].norm() == doctest::Approx(1.0));
  Eigen::Map<const Vector> frame(doc.visual->data(), 3);
  const Vector vis = p.visual_projection * frame;
  CHECK((b.vectors[2] - vis / vis.norm()).cwiseAbs().maxCoeff() < 1e-14);
  doc.visual = std::vector<double>{1.0};
  CHECK_THROWS_AS(encode_modalities(p, embedder, doc), SchemaError);
}

TEST_CASE("alignment loss against the InfoNCE oracle") {
  MultimodalParams p = seeded_params(7);
  Rng rng(8);
  const Matrix x = test::random_matrix(4, 6, rng), y = test::random_matrix(4, 6, rng);
  const Matrix fx = x * p.value.transpose(), fy = y * p.value.transpose();
  double dist = 0;
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < fx.cols(); ++j) dist += (fx(i, j) - fy(i, j)) * (fx(i, j) - fy(i, j));
  dist /= 4.0;
  const double bound = infonce_oracle(fx, fy, 0.1);
  const AlignmentLossParts parts = alignment_loss(p, x, y);
  CHECK(parts.distance == doctest::Approx(dist).epsilon(1e-12));
  CHECK(std::abs(parts.infonce_bound - bound) < 1e-10);
  CHECK(std::abs(parts.total - (dist - 0.1 * bound)) < 1e-10);
  CHECK(parts.infonce_bound <= std::log(4.0));

  p.lambda_mi = 0.0;
  CHECK(alignment_loss(p, x, y).total == alignment_loss(p, x, y).distance);
  CHECK(alignment_loss(p, x, x).distance == 0.0);
}

TEST_CASE("InfoNCE bound respects ln n") {
  const MultimodalParams p = seeded_params(9);
  Rng rng(10);
  for (int n : {2, 5, 16}) {
    const Matrix x = test::random_matrix(n, 6, rng);
    // Perfectly paired rows push the bound toward ln n.
    CHECK(alignment_loss(p, x, x).infonce_bound <= std::log(static_cast<double>(n)));
    CHECK(alignment_loss(p, x, test::random_matrix(n, 6, rng)).infonce_bound <= std::log(static_cast<double>(n)));
  }
}

TEST_CASE("single pair falls back to the distance term") {
  const MultimodalParams p = seeded_params(1);
  Rng rng(2);
  const Matrix x = test::random_matrix(1, 6, rng), y = test::random_matrix(1, 6, rng);
  test::WarningCapture capture;
  const auto parts = alignment_loss(p, x, y);
  CHECK(parts.total == parts.distance);
  CHECK(capture.messages.size() == 1u);
  CHECK_THROWS_AS(alignment_loss(p, x, test::random_matrix(2, 6, rng)), ConfigError);
}

TEST_CASE("alignment loss gradient matches finite differences") {
  MultimodalParams p = seeded_params(11);
  Rng rng(12);
  const Matrix x = test::random_matrix(4, 6, rng), y = test::random_matrix(4, 6, rng);
  ad::Tape tape;
  ad::Var w = tape.parameter(p.value);
  ad::Var loss = alignment_loss_graph(w, tape.constant(x), tape.constant(y), p.lambda_mi, p.temperature);
  CHECK(loss.scalar() == doctest::Approx(alignment_loss(p, x, y).total).epsilon(1e-12));
  tape.backward(loss);
  const Matrix grad = w.grad();
  const double eps = 1e-5;
  double worst = 0;
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
      MultimodalParams up = p, down = p;
      up.value(i, j) += eps;
      down.value(i, j) -= eps;
      const double numeric = (alignment_loss(up, x, y).total - alignment_loss(down, x, y).total) / (2 * eps);
      worst = std::max(worst, std::abs(numeric - grad(i, j)) / std::max({std::abs(numeric), std::abs(grad(i, j)), 1e-6}));
    }
  CHECK(worst < 1e-4);
}
