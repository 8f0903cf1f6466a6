#include "craf/multimodal.hpp"
#include "craf/fusion.hpp"

#include <cmath>

namespace craf {

int ModalityBundle::count() const {
  int c = 0;
  for (bool p : present) c += p ? 1 : 0;
  return c;
}

void ModalityBundle::validate() const {
  if (count() == 0) throw SchemaError("modality bundle has no present modality");
  for (int m = 0; m < kNumModalities; ++m)
    if (present[m] && !vectors[m].allFinite()) throw SchemaError("modality " + std::to_string(m) + " is non-finite");
}

MultimodalParams MultimodalParams::init(int semantic_dim, int shared_dim, int visual_dim, Rng& rng) {
  MultimodalParams p;
  p.raw_weights = Matrix::Zero(1, kNumModalities);
  p.query = glorot_uniform(shared_dim, semantic_dim, rng);
  p.key = glorot_uniform(shared_dim, semantic_dim, rng);
  p.value = glorot_uniform(shared_dim, semantic_dim, rng);
  p.visual_projection = Matrix(semantic_dim, visual_dim);
  for (Eigen::Index j = 0; j < p.visual_projection.cols(); ++j)
    for (Eigen::Index i = 0; i < p.visual_projection.rows(); ++i) p.visual_projection(i, j) = rng.normal();
  return p;
}

std::array<double, kNumModalities> modality_weights(const MultimodalParams& params, const ModalityBundle& bundle) {
  std::array<double, kNumModalities> beta{};
  double max_raw = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < kNumModalities; ++m)
    if (bundle.present[m]) max_raw = std::max(max_raw, params.raw_weights(0, m));
  double total = 0.0;
  for (int m = 0; m < kNumModalities; ++m) {
    if (!bundle.present[m]) continue;
    beta[m] = std::exp(params.raw_weights(0, m) - max_raw);
    total += beta[m];
  }
  for (auto& b : beta) b /= total;
  return beta;
}

namespace {

Matrix present_rows(const ModalityBundle& bundle) {
  Matrix rows(bundle.count(), bundle.vectors[0].size());
  Eigen::Index r = 0;
  for (int m = 0; m < kNumModalities; ++m)
    if (bundle.present[m]) rows.row(r++) = bundle.vectors[m].transpose();
  return rows;
}

Vector context_of(const ModalityBundle& bundle) { return present_rows(bundle).colwise().mean().transpose(); }

ad::Var attend(ad::Tape& tape, const MultimodalParams& params, const Vector& h_m, const Vector& context,
               const Matrix& members) {
  ad::Var query_in = tape.constant(((h_m + context) * 0.5).transpose());
  ad::Var q = ad::matmul_nt(query_in, tape.constant(params.query));  // 1 x d''
  ad::Var h = tape.constant(members);
  ad::Var keys = ad::matmul_nt(h, tape.constant(params.key));       // p x d''
  ad::Var values = ad::matmul_nt(h, tape.constant(params.value));   // p x d''
  ad::Var scores = ad::scale(ad::matmul_nt(q, keys), 1.0 / std::sqrt(static_cast<double>(params.shared_dim())));
  return ad::matmul(ad::row_softmax(scores), values);
}

}  // namespace

Vector cross_modal_attention(const MultimodalParams& params, const Vector& h_m, const ModalityBundle& bundle) {
  bundle.validate();
  ad::Tape tape;
  return attend(tape, params, h_m, context_of(bundle), present_rows(bundle)).value().row(0).transpose();
}

Vector align_multimodal(const MultimodalParams& params, const ModalityBundle& bundle) {
  bundle.validate();
  const auto beta = modality_weights(params, bundle);
  const Vector context = context_of(bundle);
  const Matrix members = present_rows(bundle);
  Vector out = Vector::Zero(params.shared_dim());
  for (int m = 0; m < kNumModalities; ++m) {
    if (!bundle.present[m]) continue;
    ad::Tape tape;
    out += beta[m] * attend(tape, params, bundle.vectors[m], context, members).value().row(0).transpose();
  }
  return out;
}

ModalityBundle encode_modalities(const MultimodalParams& params, const EmbeddingProvider& provider, const Document& doc) {
  auto unit = [](Vector v) {
    const double n = v.norm();
    if (n > 0.0) v /= n;
    return v;
  };
  ModalityBundle bundle;
  const int d = params.semantic_dim();
  for (auto& v : bundle.vectors) v = Vector::Zero(d);
  bundle.vectors[0] = encode_semantic(provider, doc);
  bundle.present[0] = true;
  if (doc.asr) {
    Document transcript;
    transcript.text = *doc.asr;
    bundle.vectors[1] = encode_semantic(provider, transcript);
    bundle.present[1] = true;
  }
  if (doc.visual) {
    if (static_cast<Eigen::Index>(doc.visual->size()) != params.visual_projection.cols())
      throw SchemaError("visual feature vector has " + std::to_string(doc.visual->size()) + " entries, expected " +
                        std::to_string(params.visual_projection.cols()));
    Eigen::Map<const Vector> frame(doc.visual->data(), static_cast<Eigen::Index>(doc.visual->size()));
    bundle.vectors[2] = unit(params.visual_projection * frame);
    bundle.present[2] = true;
  }
  return bundle;
}

namespace {

ad::Var infonce_bound_graph(const ad::Var& fx, const ad::Var& fy, double temperature) {
  const auto n = static_cast<int>(fx.rows());
  ad::Var logits = ad::scale(ad::matmul_nt(ad::normalize_rows(fx), ad::normalize_rows(fy)), 1.0 / temperature);
  std::vector<int> diagonal(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) diagonal[static_cast<std::size_t>(i)] = i;
  ad::Var nce = ad::scale(ad::mean(ad::log(ad::pick(ad::row_softmax(logits), diagonal), 1e-300)), -1.0);
  return ad::add_scalar(ad::scale(nce, -1.0), std::log(static_cast<double>(n)));
}

}  // namespace

ad::Var alignment_loss_graph(const ad::Var& value_projection, const ad::Var& x, const ad::Var& y, double lambda_mi,
                             double temperature) {
  ad::Var fx = ad::matmul_nt(x, value_projection);
  ad::Var fy = ad::matmul_nt(y, value_projection);
  ad::Var distance = ad::scale(ad::sum(ad::square(ad::sub(fx, fy))), 1.0 / static_cast<double>(x.rows()));
  if (x.rows() < 2 || lambda_mi == 0.0) return distance;
  return ad::sub(distance, ad::scale(infonce_bound_graph(fx, fy, temperature), lambda_mi));
}

AlignmentLossParts alignment_loss(const MultimodalParams& params, const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.rows() == 0) throw ConfigError("alignment loss: need equally sized nonempty batches");
  if (x.rows() < 2) warn("alignment loss: batch of 1 has no negatives; using the distance term only");
  ad::Tape tape;
  ad::Var w = tape.constant(params.value);
  ad::Var fx = ad::matmul_nt(tape.constant(x), w);
  ad::Var fy = ad::matmul_nt(tape.constant(y), w);
  AlignmentLossParts parts;
  parts.distance = ad::sum(ad::square(ad::sub(fx, fy))).scalar() / static_cast<double>(x.rows());
  parts.total = parts.distance;
  if (x.rows() >= 2) {
    parts.infonce_bound = infonce_bound_graph(fx, fy, params.temperature).scalar();
    if (params.lambda_mi != 0.0) parts.total = parts.distance - params.lambda_mi * parts.infonce_bound;
  }
  return parts;
}

}  // namespace craf
