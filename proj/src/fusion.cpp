#include "craf/fusion.hpp"

#include <cmath>
#include <numeric>

namespace craf {

Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

FusionParams FusionParams::init(int input_dim, int proj_dim, int meta_dim, int num_layers, Rng& rng) {
  if (proj_dim < 1) throw ConfigError("projection dimension must be >= 1");
  if (num_layers < 0) throw ConfigError("refinement depth must be >= 0");
  FusionParams p;
  p.input_dim = input_dim;
  p.proj_dim = proj_dim;
  p.meta_dim = meta_dim;
  p.projection = glorot_uniform(proj_dim, input_dim, rng);
  p.attention = glorot_uniform(1, 2 * proj_dim, rng);
  p.gate_weight = glorot_uniform(proj_dim, 2 * proj_dim + meta_dim, rng);
  p.gate_bias = Matrix::Zero(1, proj_dim);
  p.residual = glorot_uniform(proj_dim, meta_dim, rng);
  for (int l = 0; l < num_layers; ++l) {
    RefineLayer layer;
    layer.weight = glorot_uniform(proj_dim, proj_dim, rng);
    layer.bias = Matrix::Zero(1, proj_dim);
    layer.gain = Matrix::Ones(1, proj_dim);
    layer.shift = Matrix::Zero(1, proj_dim);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<std::pair<std::string, Matrix*>> named_tensors(FusionParams& p) {
  std::vector<std::pair<std::string, Matrix*>> out = {
      {"fusion.projection", &p.projection}, {"fusion.attention", &p.attention},
      {"fusion.gate_weight", &p.gate_weight}, {"fusion.gate_bias", &p.gate_bias},
      {"fusion.residual", &p.residual},
  };
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const std::string prefix = "fusion.refine" + std::to_string(l) + ".";
    out.emplace_back(prefix + "weight", &p.layers[l].weight);
    out.emplace_back(prefix + "bias", &p.layers[l].bias);
    out.emplace_back(prefix + "gain", &p.layers[l].gain);
    out.emplace_back(prefix + "shift", &p.layers[l].shift);
  }
  return out;
}

void FusionParams::check_finite() const {
  for (auto& [name, m] : named_tensors(const_cast<FusionParams&>(*this)))
    if (!m->allFinite()) throw NumericalError("non-finite entry in " + name);
}

SourcePrototypes::SourcePrototypes(int num_sources, int dim)
    : ema_(Matrix::Zero(num_sources, dim)), steps_(static_cast<std::size_t>(num_sources), 0) {}

void SourcePrototypes::update(const Matrix& encodings, std::span<const int> sources, bool report_unseen) {
  const int K = num_sources();
  Matrix sums = Matrix::Zero(K, ema_.cols());
  std::vector<int> counts(static_cast<std::size_t>(K), 0);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const int k = sources[i];
    sums.row(k) += encodings.row(static_cast<Eigen::Index>(i));
    ++counts[static_cast<std::size_t>(k)];
  }
  for (int k = 0; k < K; ++k) {
    const auto c = counts[static_cast<std::size_t>(k)];
    if (c == 0) {
      if (report_unseen && steps_[static_cast<std::size_t>(k)] == 0)
        warn("prototypes: source " + std::to_string(k) + " absent from batch and never observed; using a zero prototype");
      continue;
    }
    ema_.row(k) = kMomentum * ema_.row(k) + (1.0 - kMomentum) * sums.row(k) / static_cast<double>(c);
    ++steps_[static_cast<std::size_t>(k)];
  }
}

Matrix SourcePrototypes::values() const {
  Matrix out = Matrix::Zero(ema_.rows(), ema_.cols());
  for (int k = 0; k < num_sources(); ++k) {
    const int t = steps_[static_cast<std::size_t>(k)];
    if (t == 0) continue;
    out.row(k) = ema_.row(k) / (1.0 - std::pow(kMomentum, t));
  }
  return out;
}

void SourcePrototypes::add_source() {
  ema_.conservativeResize(ema_.rows() + 1, Eigen::NoChange);
  ema_.row(ema_.rows() - 1).setZero();
  steps_.push_back(0);
}

void SourcePrototypes::restore(Matrix ema, std::vector<int> steps) {
  if (static_cast<std::size_t>(ema.rows()) != steps.size()) throw SchemaError("prototype state: row/step count mismatch");
  ema_ = std::move(ema);
  steps_ = std::move(steps);
}

FusionVars bind_fusion(ad::Tape& tape, const FusionParams& params,
                       const std::function<bool(const std::string&)>& trainable) {
  auto bind = [&](const std::string& name, const Matrix& m) {
    return trainable(name) ? tape.parameter(m) : tape.constant(m);
  };
  FusionVars v;
  v.projection = bind("fusion.projection", params.projection);
  v.attention = bind("fusion.attention", params.attention);
  v.gate_weight = bind("fusion.gate_weight", params.gate_weight);
  v.gate_bias = bind("fusion.gate_bias", params.gate_bias);
  v.residual = bind("fusion.residual", params.residual);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const std::string prefix = "fusion.refine" + std::to_string(l) + ".";
    const auto& layer = params.layers[l];
    v.layers.push_back({bind(prefix + "weight", layer.weight), bind(prefix + "bias", layer.bias),
                        bind(prefix + "gain", layer.gain), bind(prefix + "shift", layer.shift)});
  }
  return v;
}

AttentionVars attention_graph(const FusionVars& vars, const ad::Var& prototypes, double leaky_slope) {
  ad::Tape& tape = *prototypes.tape();
  const Eigen::Index K = prototypes.rows();
  const Eigen::Index d = vars.projection.rows();

  ad::Var projected = ad::matmul_nt(prototypes, vars.projection);  // K x d'
  ad::Var a_self = ad::slice_cols(vars.attention, 0, d);
  ad::Var a_other = ad::slice_cols(vars.attention, d, d);
  ad::Var self_score = ad::matmul_nt(projected, a_self);    // K x 1
  ad::Var other_score = ad::matmul_nt(a_other, projected);  // 1 x K
  ad::Var ones = tape.constant(Matrix::Ones(K, K));
  ad::Var logits = ad::leaky_relu(ad::add_row(ad::mul_col(ones, self_score), other_score), leaky_slope);

  const Matrix& e = logits.value();
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < K; ++j)
      if (!std::isfinite(e(k, j)))
        throw NumericalError("non-finite attention logit for source pair (" + std::to_string(k) + ", " +
                             std::to_string(j) + ")");

  ad::Var alpha = ad::row_softmax(logits);
  ad::Var aligned = ad::elu(ad::matmul(alpha, projected));
  return {alpha, aligned};
}

ad::Var gate_graph(const FusionVars& vars, const ad::Var& h_proj, const ad::Var& aligned, const ad::Var& meta) {
  const ad::Var parts[] = {h_proj, aligned, meta};
  ad::Var input = ad::concat_cols(parts);
  return ad::sigmoid(ad::add_row(ad::matmul_nt(input, vars.gate_weight), vars.gate_bias));
}

ad::Var fuse_graph(const FusionVars& vars, const ad::Var& h_proj, const ad::Var& aligned, const ad::Var& meta,
                   const ad::Var& gate) {
  ad::Var keep = ad::add_scalar(ad::scale(gate, -1.0), 1.0);
  ad::Var blended = ad::add(ad::mul(gate, h_proj), ad::mul(keep, aligned));
  return ad::add(blended, ad::matmul_nt(meta, vars.residual));
}

ad::Var refine_graph(const FusionVars& vars, const ad::Var& z) {
  ad::Var out = z;
  for (const auto& layer : vars.layers) {
    ad::Var pre = ad::relu(ad::add_row(ad::matmul_nt(out, layer.weight), layer.bias));
    out = ad::layer_norm(pre, layer.gain, layer.shift, kLayerNormEps);
  }
  return out;
}

AttentionVars split_attention_graph(const FusionVars& vars, const ad::Var& prototypes, const FusionSettings& settings) {
  const auto K = static_cast<int>(prototypes.rows());
  const int base = settings.base_sources;
  if (base <= 0 || base >= K) return attention_graph(vars, prototypes, settings.leaky_slope);

  ad::Tape& tape = *prototypes.tape();
  std::vector<int> base_rows(static_cast<std::size_t>(base));
  for (int k = 0; k < base; ++k) base_rows[static_cast<std::size_t>(k)] = k;
  // Base sources see exactly the computation they were trained with.
  AttentionVars inner = attention_graph(vars, ad::gather_rows(prototypes, base_rows), settings.leaky_slope);
  AttentionVars full = attention_graph(vars, prototypes, settings.leaky_slope);
  std::vector<int> extra_rows;
  for (int k = base; k < K; ++k) extra_rows.push_back(k);
  const ad::Var aligned_parts[] = {inner.aligned, ad::gather_rows(full.aligned, extra_rows)};

  Matrix alpha = Matrix::Zero(K, K);
  alpha.topLeftCorner(base, base) = inner.alpha.value();
  alpha.bottomRows(K - base) = full.alpha.value().bottomRows(K - base);
  return {tape.constant(std::move(alpha)), ad::concat_rows(aligned_parts)};
}

FusionOutputs fusion_graph(const FusionVars& vars, const ad::Var& encodings, const ad::Var& meta,
                           std::span<const int> sources, const ad::Var& prototypes, const FusionSettings& settings) {
  ad::Tape& tape = *encodings.tape();
  ad::Var h_proj = ad::matmul_nt(encodings, vars.projection);
  AttentionVars att = split_attention_graph(vars, prototypes, settings);
  ad::Var aligned = settings.switches.attention ? ad::gather_rows(att.aligned, sources) : h_proj;
  ad::Var gate = settings.switches.gate ? gate_graph(vars, h_proj, aligned, meta)
                                        : tape.constant(Matrix::Constant(h_proj.rows(), h_proj.cols(), 0.5));
  ad::Var z = fuse_graph(vars, h_proj, aligned, meta, gate);
  return {refine_graph(vars, z), gate, att};
}

namespace {

auto all_constant = [](const std::string&) { return false; };

Matrix as_row(const Vector& v) { return v.transpose(); }

}  // namespace

AttentionResult collaborative_attention(const FusionParams& params, const Matrix& prototypes) {
  if (!prototypes.allFinite()) throw NumericalError("collaborative attention: non-finite prototype");
  ad::Tape tape;
  FusionVars vars = bind_fusion(tape, params, all_constant);
  FusionSettings settings{params.leaky_slope, params.base_sources, {}};
  AttentionVars att = split_attention_graph(vars, tape.constant(prototypes), settings);
  return {att.alpha.value(), att.aligned.value()};
}

Vector adaptive_gate(const FusionParams& params, const Vector& h_proj, const Vector& aligned, const Vector& meta) {
  ad::Tape tape;
  FusionVars vars = bind_fusion(tape, params, all_constant);
  ad::Var g = gate_graph(vars, tape.constant(as_row(h_proj)), tape.constant(as_row(aligned)), tape.constant(as_row(meta)));
  return g.value().row(0).transpose();
}

Vector fuse(const FusionParams& params, const Vector& h_proj, const Vector& aligned, const Vector& meta,
            const Vector& gate) {
  ad::Tape tape;
  FusionVars vars = bind_fusion(tape, params, all_constant);
  ad::Var z = fuse_graph(vars, tape.constant(as_row(h_proj)), tape.constant(as_row(aligned)),
                         tape.constant(as_row(meta)), tape.constant(as_row(gate)));
  return z.value().row(0).transpose();
}

Vector refine(const FusionParams& params, const Vector& z) {
  ad::Tape tape;
  FusionVars vars = bind_fusion(tape, params, all_constant);
  return refine_graph(vars, tape.constant(as_row(z))).value().row(0).transpose();
}

Vector apply_refine_layer(const RefineLayer& layer, const Vector& z) {
  ad::Tape tape;
  FusionVars::Layer l{tape.constant(layer.weight), tape.constant(layer.bias), tape.constant(layer.gain),
                      tape.constant(layer.shift)};
  ad::Var pre = ad::relu(ad::add_row(ad::matmul_nt(tape.constant(as_row(z)), l.weight), l.bias));
  return ad::layer_norm(pre, l.gain, l.shift, kLayerNormEps).value().row(0).transpose();
}

bool ContractionReport::contractive() const {
  for (double e : eta)
    if (!(e < 1.0)) return false;
  return true;
}

double ContractionReport::max_eta() const {
  double m = 0.0;
  for (double e : eta) m = std::max(m, e);
  return m;
}

ContractionReport estimate_contraction(const FusionParams& params, int probe_count, double radius, std::uint64_t seed) {
  if (probe_count < 2) throw ConfigError("estimate_contraction: probe_count must be >= 2");
  if (!(radius > 0.0)) throw ConfigError("estimate_contraction: radius must be positive");
  ContractionReport report;
  Rng rng(seed);
  const int d = params.proj_dim;
  for (const auto& layer : params.layers) {
    double eta = 0.0;
    for (int p = 0; p < probe_count; ++p) {
      Vector u(d), dir(d);
      for (int i = 0; i < d; ++i) u(i) = rng.normal();
      // Layer norm scales like 1 / ||u||, so a Gaussian centre would make the
      // maximum track the smallest probe norm rather than the layer.
      u *= std::sqrt(static_cast<double>(d)) / u.norm();
      double dist = 0.0;
      while (!(dist > 0.0)) {
        for (int i = 0; i < d; ++i) dir(i) = rng.normal();
        const double norm = dir.norm();
        if (norm == 0.0) continue;
        dir *= radius * rng.uniform() / norm;
        dist = dir.norm();
      }
      const Vector v = u + dir;
      const double ratio = (apply_refine_layer(layer, u) - apply_refine_layer(layer, v)).norm() / (u - v).norm();
      eta = std::max(eta, ratio);
    }
    report.eta.push_back(eta);
  }
  return report;
}

}  // namespace craf
