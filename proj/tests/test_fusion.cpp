#include <doctest.h>

#include "craf/fusion.hpp"
#include "craf/model.hpp"
#include "oracle.hpp"
#include "support.hpp"

#include <cmath>

using namespace craf;

namespace {

FusionParams params(int input, int proj, int meta, int layers, std::uint64_t seed) {
  Rng rng(seed);
  return FusionParams::init(input, proj, meta, layers, rng);
}

Matrix random_orthogonal(int d, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(test::random_matrix(d, d, rng));
  return qr.householderQ() * Matrix::Identity(d, d);
}

double power_iteration(const Matrix& W, int iters = 500) {
  Vector v = Vector::Ones(W.cols()).normalized();
  double s = 0;
  for (int i = 0; i < iters; ++i) {
    Vector w = W.transpose() * (W * v);
    s = std::sqrt(w.norm());
    v = w.normalized();
  }
  return s;
}

// Refinement layer whose ReLU never binds: W is 0.5 times an orthogonal matrix
// and a large positive bias keeps every pre-activation above zero.
RefineLayer identity_like_layer(int d, Rng& rng) {
  RefineLayer l;
  l.weight = 0.5 * random_orthogonal(d, rng);
  l.bias = Matrix::Constant(1, d, 5.0);
  l.gain = Matrix::Ones(1, d);
  l.shift = Matrix::Zero(1, d);
  return l;
}

}  // namespace

TEST_CASE("first update with one document per source") {
  SourcePrototypes protos(3, 4);
  Rng rng(1);
  const Matrix docs = test::random_matrix(3, 4, rng);
  const std::vector<int> src{2, 0, 1};
  protos.update(docs, src);
  const Matrix v = protos.values();
  CHECK((v.row(2) - docs.row(0)).norm() < 1e-12);
  CHECK((v.row(0) - docs.row(1)).norm() < 1e-12);
  CHECK((v.row(1) - docs.row(2)).norm() < 1e-12);
}

TEST_CASE("identical documents give their common encoding") {
  SourcePrototypes protos(1, 3);
  Matrix docs(2, 3);
  docs << 1, 2, 3, 1, 2, 3;
  const std::vector<int> src{0, 0};
  protos.update(docs, src);
  CHECK((protos.values().row(0) - docs.row(0)).norm() < 1e-12);
}

TEST_CASE("EMA over two batches") {
  SourcePrototypes protos(1, 2);
  Matrix b1(2, 2), b2(1, 2);
  b1 << 1, 0, 3, 2;  // mean (2, 1)
  b2 << -1, 4;
  const std::vector<int> two{0, 0}, one{0};
  protos.update(b1, two);
  protos.update(b2, one);
  // ema = 0.9 * (0.1 * m1) + 0.1 * m2, corrected by 1 - 0.9^2
  RowVector expected(2);
  expected << (0.09 * 2 + 0.1 * -1) / 0.19, (0.09 * 1 + 0.1 * 4) / 0.19;
  CHECK((protos.values().row(0) - expected).norm() < 1e-12);
}

TEST_CASE("unseen source keeps a zero prototype and is reported") {
  test::WarningCapture capture;
  SourcePrototypes protos(2, 2);
  const std::vector<int> src{0};
  protos.update(Matrix::Ones(1, 2), src);
  CHECK(protos.values().row(1).isZero());
  CHECK(capture.messages.size() == 1u);
  // Once observed, absence is silent and the running value is kept.
  const std::vector<int> other{1};
  protos.update(Matrix::Ones(1, 2), other);
  protos.update(Matrix::Ones(1, 2), src);
  CHECK(capture.messages.size() == 1u);
  CHECK(protos.values().row(1).isApprox(RowVector::Ones(2)));
}

TEST_CASE("add_source appends an unobserved prototype") {
  SourcePrototypes protos(1, 2);
  const std::vector<int> src{0};
  protos.update(Matrix::Ones(1, 2), src);
  protos.add_source();
  CHECK(protos.num_sources() == 2);
  CHECK(protos.values().row(1).isZero());
  CHECK(protos.values().row(0).isApprox(RowVector::Ones(2)));
}

TEST_CASE("attention over a single source") {
  const FusionParams p = params(5, 3, 2, 1, 3);
  Rng rng(4);
  const Matrix proto = test::random_matrix(1, 5, rng);
  const auto att = collaborative_attention(p, proto);
  CHECK(att.alpha(0, 0) == 1.0);
  const Vector h = p.projection * proto.row(0).transpose();
  for (int i = 0; i < 3; ++i) CHECK(att.aligned(0, i) == doctest::Approx(oracle::elu(h(i))).epsilon(1e-14));
}

TEST_CASE("identical prototypes give uniform attention") {
  const FusionParams p = params(5, 3, 2, 1, 3);
  Matrix protos(2, 5);
  protos.row(0) << 1, 2, 3, 4, 5;
  protos.row(1) = protos.row(0);
  const auto att = collaborative_attention(p, protos);
  CHECK((att.alpha - Matrix::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("attention matches the straight-line oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const FusionParams p = params(7, 4, 2, 1, seed);
    Rng rng(seed + 100);
    const Matrix protos = test::random_matrix(3, 7, rng);
    const auto att = collaborative_attention(p, protos);
    const auto ref = oracle::attention(p, protos);
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(att.alpha.row(k).sum() - 1.0) < 1e-12);
      CHECK((att.aligned.row(k).transpose() - ref.aligned[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK((att.alpha - ref.alpha).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-finite attention logits name the pair") {
  FusionParams p = params(2, 2, 0, 1, 1);
  p.attention = Matrix::Constant(1, 4, std::numeric_limits<double>::infinity());
  Matrix protos = Matrix::Ones(2, 2);
  try {
    collaborative_attention(p, protos);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("(0, 0)") != std::string::npos);
  }
}

TEST_CASE("gate endpoints") {
  FusionParams p = params(4, 3, 2, 1, 2);
  Rng rng(6);
  const Vector h = test::random_vector(3, rng), a = test::random_vector(3, rng), m = test::random_vector(2, rng);
  p.gate_weight.setZero();
  CHECK((adaptive_gate(p, h, a, m).array() == 0.5).all());
  p.gate_bias.setConstant(20.0);
  CHECK((adaptive_gate(p, h, a, m).array() - 1.0).abs().maxCoeff() < 1e-8);
}

TEST_CASE("gate matches the formula and stays inside (0, 1)") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    FusionParams p = params(4, 5, 3, 1, seed);
    Rng rng(seed * 7);
    p.gate_bias = test::random_matrix(1, 5, rng);
    const Vector h = test::random_vector(5, rng), a = test::random_vector(5, rng), m = test::random_vector(3, rng);
    const Vector g = adaptive_gate(p, h, a, m);
    CHECK((g - oracle::gate(p, h, a, m)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g.array() > 0.0).all());
    CHECK((g.array() < 1.0).all());
  }
}

TEST_CASE("fuse endpoints") {
  FusionParams p = params(4, 3, 2, 1, 2);
  Rng rng(8);
  const Vector h = test::random_vector(3, rng), a = test::random_vector(3, rng);
  const Vector zero_m = Vector::Zero(2);
  CHECK(fuse(p, h, a, zero_m, Vector::Ones(3)) == h);
  CHECK(fuse(p, h, a, zero_m, Vector::Zero(3)) == a);
  CHECK(fuse(p, h, -h, zero_m, Vector::Constant(3, 0.5)).isZero());

  const Vector m = test::random_vector(2, rng), g = test::random_vector(3, rng).cwiseAbs().cwiseMin(1.0);
  CHECK((fuse(p, h, a, m, g) - oracle::fuse(p, h, a, m, g)).cwiseAbs().maxCoeff() < 1e-14);
  // Homogeneous in (h, a) with no metadata.
  CHECK((fuse(p, 3.0 * h, 3.0 * a, zero_m, g) - 3.0 * fuse(p, h, a, zero_m, g)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("refine with a constant pre-activation returns the layer-norm offset") {
  FusionParams p = params(4, 3, 2, 1, 2);
  p.layers[0].weight.setZero();
  p.layers[0].bias.setConstant(2.5);
  p.layers[0].shift << 0.1, -0.2, 0.3;
  Rng rng(3);
  CHECK((refine(p, test::random_vector(3, rng)) - p.layers[0].shift.transpose()).norm() < 1e-12);
}

TEST_CASE("refine with no layers is the identity") {
  const FusionParams p = params(4, 3, 2, 0, 2);
  Rng rng(3);
  const Vector z = test::random_vector(3, rng);
  CHECK(refine(p, z) == z);
}

TEST_CASE("three-layer refine matches the oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    FusionParams p = params(4, 6, 2, 3, seed);
    Rng rng(seed + 50);
    for (auto& l : p.layers) {
      l.bias = test::random_matrix(1, 6, rng, 0.3);
      l.gain = test::random_matrix(1, 6, rng);
      l.shift = test::random_matrix(1, 6, rng);
    }
    const Vector z = test::random_vector(6, rng, 2.0);
    const Vector out = refine(p, z);
    CHECK(out.allFinite());
    CHECK((out - oracle::refine(p, z)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("contraction estimate of a constant layer is zero") {
  FusionParams p = params(4, 5, 2, 2, 1);
  for (auto& l : p.layers) l.weight.setZero();
  const auto r = estimate_contraction(p, 8, 1.0, 3);
  REQUIRE(r.eta.size() == 2u);
  CHECK(r.eta[0] == 0.0);
  CHECK(r.eta[1] == 0.0);
  CHECK(r.contractive());
}

TEST_CASE("contraction estimate is deterministic and validates input") {
  const FusionParams p = params(4, 5, 2, 2, 1);
  CHECK(estimate_contraction(p, 2, 0.5, 9).eta == estimate_contraction(p, 2, 0.5, 9).eta);
  CHECK_THROWS_AS(estimate_contraction(p, 1, 0.5, 9), ConfigError);
  CHECK_THROWS_AS(estimate_contraction(p, 4, 0.0, 9), ConfigError);
}

TEST_CASE("contraction estimate on an identity-like layer") {
  const int d = 64;
  Rng rng(12);
  FusionParams p = params(4, d, 2, 1, 1);
  p.layers[0] = identity_like_layer(d, rng);
  const double spectral = power_iteration(p.layers[0].weight);
  CHECK(spectral == doctest::Approx(0.5).epsilon(1e-9));

  // The affine-plus-ReLU part is Lipschitz with the spectral norm of W.
  const auto& l = p.layers[0];
  for (int t = 0; t < 200; ++t) {
    const Vector u = test::random_vector(d, rng), v = u + test::random_vector(d, rng, 0.1);
    const Vector fu = (l.weight * u + l.bias.transpose()).cwiseMax(0.0);
    const Vector fv = (l.weight * v + l.bias.transpose()).cwiseMax(0.0);
    CHECK((fu - fv).norm() <= spectral * (u - v).norm() * (1 + 1e-9));
  }

  // Layer norm cancels the scale of W, so the full layer is rescaled through its
  // gain to a target of 0.5 and re-estimated with fresh probes.
  const double at_unit_gain = estimate_contraction(p, 64, 1.0, 1).eta[0];
  p.layers[0].gain *= 0.5 / at_unit_gain;
  double lo = 1e9, hi = 0;
  for (std::uint64_t seed = 2; seed <= 6; ++seed) {
    const double eta = estimate_contraction(p, 64, 1.0, seed).eta[0];
    lo = std::min(lo, eta);
    hi = std::max(hi, eta);
  }
  CHECK(hi <= 1.0);
  CHECK(hi - lo < 0.1);
}

TEST_CASE("iterated refinement contracts at the estimated rate") {
  const int d = 64;
  const int L = 3;
  double worst_excess = -1;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(trial + 1);
    FusionParams p = params(4, d, 2, L, trial);
    for (int k = 0; k < L; ++k) {
      p.layers[static_cast<std::size_t>(k)] = identity_like_layer(d, rng);
      FusionParams single = p;
      single.layers = {p.layers[static_cast<std::size_t>(k)]};
      auto& layer = p.layers[static_cast<std::size_t>(k)];
      layer.gain *= 0.5 / estimate_contraction(single, 64, 1.0, trial).eta[0];
      // Offsets keep each layer's output at the scale the estimate was probed at.
      layer.shift.setConstant(1.0);
    }
    const double eta_bar = estimate_contraction(p, 64, 1.0, trial + 77).max_eta();
    const Vector u = test::random_vector(d, rng), v = test::random_vector(d, rng);
    const double ratio = (refine(p, u) - refine(p, v)).norm() / (u - v).norm();
    worst_excess = std::max(worst_excess, ratio - (std::pow(eta_bar, L) + 0.05));
  }
  CHECK(worst_excess <= 0.0);
}

TEST_CASE("model forward matches the whole-pipeline oracle") {
  const Corpus c = test::small_corpus(3, 12, 5, 3);
  ModelConfig cfg;
  cfg.tfidf_dim = 24;
  cfg.semantic_dim = 16;
  cfg.proj_dim = 6;
  CrafModel model = CrafModel::create(c, cfg, 3);
  const EncodedBatch batch = encode_corpus(model, c);
  model.prototypes.update(batch.features, batch.sources);
  Rng rng(2);
  for (auto& l : model.fusion.layers) l.bias = test::random_matrix(1, 6, rng, 0.2);
  model.fusion.gate_bias = test::random_matrix(1, 6, rng, 0.5);

  const ForwardResult out = forward(model, batch);
  const auto ref = oracle::forward(model, batch);
  REQUIRE(out.z.rows() == static_cast<Eigen::Index>(c.size()));
  CHECK((out.z - ref.z).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((out.Q - ref.Q).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((out.S - ref.S).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((out.alpha - oracle::attention(model.fusion, model.prototypes.values()).alpha).cwiseAbs().maxCoeff() < 1e-12);

  // Order-preserving and deterministic.
  const ForwardResult again = forward(model, batch);
  CHECK(again.z == out.z);
  std::vector<std::size_t> reversed(c.size());
  for (std::size_t i = 0; i < reversed.size(); ++i) reversed[i] = reversed.size() - 1 - i;
  const ForwardResult flipped = forward(model, batch.rows(reversed));
  CHECK((flipped.z.colwise().reverse() - out.z).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-source single-document forward") {
  Corpus c = test::small_corpus(1, 1, 8);
  ModelConfig cfg;
  cfg.tfidf_dim = 16;
  cfg.semantic_dim = 8;
  cfg.proj_dim = 4;
  CrafModel model = CrafModel::create(c, cfg, 1);
  const EncodedBatch batch = encode_corpus(model, c);
  model.prototypes.update(batch.features, batch.sources);
  const auto& p = model.fusion;
  const Vector h = p.projection * batch.features.row(0).transpose();
  const Vector aligned = h.unaryExpr([](double x) { return oracle::elu(x); });
  const Vector m = batch.meta.row(0).transpose();
  const Vector expected = refine(p, fuse(p, h, aligned, m, adaptive_gate(p, h, aligned, m)));
  const ForwardResult out = forward(model, batch);
  CHECK(out.alpha(0, 0) == 1.0);
  CHECK((out.z.row(0).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ablation switches") {
  const Corpus c = test::small_corpus(2, 6, 5);
  ModelConfig cfg;
  cfg.tfidf_dim = 16;
  cfg.semantic_dim = 8;
  cfg.proj_dim = 4;
  cfg.switches.gate = false;
  CrafModel model = CrafModel::create(c, cfg, 3);
  const EncodedBatch batch = encode_corpus(model, c);
  model.prototypes.update(batch.features, batch.sources);
  CHECK((forward(model, batch).gate.array() == 0.5).all());

  model.config.switches = {false, true};
  const auto& p = model.fusion;
  const ForwardResult out = forward(model, batch);
  for (Eigen::Index i = 0; i < out.z.rows(); ++i) {
    const Vector h = p.projection * batch.features.row(i).transpose();
    const Vector m = batch.meta.row(i).transpose();
    const Vector expected = refine(p, fuse(p, h, h, m, adaptive_gate(p, h, h, m)));
    CHECK((out.z.row(i).transpose() - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("non-finite parameters are named") {
  FusionParams p = params(3, 2, 1, 2, 1);
  CHECK_NOTHROW(p.check_finite());
  p.layers[1].gain(0, 0) = std::nan("");
  try {
    p.check_finite();
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("refine1.gain") != std::string::npos);
  }
}
