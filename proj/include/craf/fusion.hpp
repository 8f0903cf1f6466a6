#pragma once

// Cross-source collaborative attention, adaptive gated fusion and hierarchical
// refinement.
//
// Shapes: D = d_T + d_S dual-encoding width, d' = projection width,
// d_m' = metadata width (raw metadata plus quality vector), K sources.
//
// The gate blends the projected document vector W_h h (not the raw h) with the
// aligned source vector, so both operands of the gated sum live in R^d'.

#include "craf/autodiff.hpp"
#include "craf/common.hpp"
#include "craf/rng.hpp"

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace craf {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kDefaultLeakySlope = 0.2;

struct RefineLayer {
  Matrix weight;  // d' x d'
  Matrix bias;    // 1 x d'
  Matrix gain;    // 1 x d', layer-norm scale
  Matrix shift;   // 1 x d', layer-norm offset
};

struct FusionParams {
  int input_dim = 0;
  int proj_dim = 0;
  int meta_dim = 0;
  double leaky_slope = kDefaultLeakySlope;
  /// Sources with index < base_sources attend only over the first base_sources
  /// prototypes; later (adapted) sources attend over all. 0 means no split.
  int base_sources = 0;

  Matrix projection;   // W_h: d' x D
  Matrix attention;    // a: 1 x 2d'
  Matrix gate_weight;  // W_g: d' x (2d' + d_m')
  Matrix gate_bias;    // b_g: 1 x d'
  Matrix residual;     // W_r: d' x d_m'
  std::vector<RefineLayer> layers;

  /// Glorot-uniform matrices, zero biases, unit layer-norm gains.
  static FusionParams init(int input_dim, int proj_dim, int meta_dim, int num_layers, Rng& rng);
  /// Throws NumericalError naming the first tensor holding a non-finite entry.
  void check_finite() const;
};

Matrix glorot_uniform(int rows, int cols, Rng& rng);

/// Switches used by ablations. Attention off feeds W_h h in place of the
/// aligned vector; gate off pins g to 0.5.
struct FusionSwitches {
  bool attention = true;
  bool gate = true;
};

/// Per-source running means of dual encodings (EMA with bias correction).
class SourcePrototypes {
 public:
  static constexpr double kMomentum = 0.9;

  SourcePrototypes() = default;
  SourcePrototypes(int num_sources, int dim);

  /// Folds the per-source means of `encodings` rows into the EMA. Sources absent
  /// from the batch keep their running value; one never observed is reported
  /// unless `report_unseen` is off.
  void update(const Matrix& encodings, std::span<const int> sources, bool report_unseen = true);
  /// Bias-corrected prototypes, K x D. Sources never observed are zero rows.
  Matrix values() const;
  void add_source();

  int num_sources() const { return static_cast<int>(steps_.size()); }
  int dim() const { return static_cast<int>(ema_.cols()); }
  const Matrix& ema() const { return ema_; }
  const std::vector<int>& steps() const { return steps_; }
  void restore(Matrix ema, std::vector<int> steps);

 private:
  Matrix ema_;
  std::vector<int> steps_;
};

struct AttentionResult {
  Matrix alpha;    // K x K, row-stochastic
  Matrix aligned;  // K x d'
};

AttentionResult collaborative_attention(const FusionParams& params, const Matrix& prototypes);
Vector adaptive_gate(const FusionParams& params, const Vector& h_proj, const Vector& aligned, const Vector& meta);
Vector fuse(const FusionParams& params, const Vector& h_proj, const Vector& aligned, const Vector& meta, const Vector& gate);
Vector refine(const FusionParams& params, const Vector& z);
Vector apply_refine_layer(const RefineLayer& layer, const Vector& z);

struct ContractionReport {
  std::vector<double> eta;  // per layer
  bool contractive() const;
  double max_eta() const;
};

/// Empirical Lipschitz constant of each refinement layer: the largest
/// ||f(u) - f(v)|| / ||u - v|| over probe pairs with u uniform on the sphere of
/// radius sqrt(d) and v within `radius` of u.
ContractionReport estimate_contraction(const FusionParams& params, int probe_count, double radius, std::uint64_t seed);

// Graph-level building blocks.

struct FusionVars {
  ad::Var projection, attention, gate_weight, gate_bias, residual;
  struct Layer {
    ad::Var weight, bias, gain, shift;
  };
  std::vector<Layer> layers;
};

struct AttentionVars {
  ad::Var alpha;
  ad::Var aligned;
};

struct FusionOutputs {
  ad::Var z;
  ad::Var gate;
  AttentionVars attention;
};

/// Dense attention over every prototype row.
AttentionVars attention_graph(const FusionVars& vars, const ad::Var& prototypes, double leaky_slope);
ad::Var gate_graph(const FusionVars& vars, const ad::Var& h_proj, const ad::Var& aligned, const ad::Var& meta);
ad::Var fuse_graph(const FusionVars& vars, const ad::Var& h_proj, const ad::Var& aligned, const ad::Var& meta,
                   const ad::Var& gate);
ad::Var refine_graph(const FusionVars& vars, const ad::Var& z);

/// Full fusion pipeline for a batch: project, attend over prototypes, gate, fuse, refine.
struct FusionSettings {
  double leaky_slope = kDefaultLeakySlope;
  int base_sources = 0;
  FusionSwitches switches;
};

/// Attention honoring `base_sources`; `alpha` is K x K with zeros outside each row's visible set.
AttentionVars split_attention_graph(const FusionVars& vars, const ad::Var& prototypes, const FusionSettings& settings);

FusionOutputs fusion_graph(const FusionVars& vars, const ad::Var& encodings, const ad::Var& meta,
                           std::span<const int> sources, const ad::Var& prototypes, const FusionSettings& settings);

/// Tensor names used for binding, checkpoints and gradient reports:
/// "fusion.projection", "fusion.attention", "fusion.gate_weight", "fusion.gate_bias",
/// "fusion.residual", "fusion.refine<l>.{weight,bias,gain,shift}".
std::vector<std::pair<std::string, Matrix*>> named_tensors(FusionParams& params);

/// Binds each tensor as a parameter when `trainable(name)` holds, else as a constant.
FusionVars bind_fusion(ad::Tape& tape, const FusionParams& params,
                       const std::function<bool(const std::string&)>& trainable);

}  // namespace craf
