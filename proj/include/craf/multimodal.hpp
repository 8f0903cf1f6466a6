#pragma once

// Multimodal alignment over stub modality encoders.
//
// h_multi = sum_m beta_m * CrossAttn(h_m, h_context), beta = softmax of raw
// weights over the present modalities, h_context = mean of present vectors.
// CrossAttn is single-head scaled dot-product attention whose query is
// W_q (h_m + h_context) / 2 and whose keys/values are the present modalities.
//
// The alignment loss maps both sides into the shared space with W_v and is
// mean ||phi(x) - phi(y)||^2 - lambda_mi * (ln n - InfoNCE), where InfoNCE uses
// cosine similarity of in-batch pairs at temperature 0.1.

#include "craf/autodiff.hpp"
#include "craf/common.hpp"
#include "craf/corpus.hpp"
#include "craf/encoders.hpp"
#include "craf/rng.hpp"

#include <array>
#include <span>

namespace craf {

enum class Modality : int { text = 0, audio = 1, visual = 2 };
inline constexpr int kNumModalities = 3;

struct ModalityBundle {
  std::array<Vector, kNumModalities> vectors;
  std::array<bool, kNumModalities> present{false, false, false};

  int count() const;
  /// Throws SchemaError when nothing is present or a present vector is non-finite.
  void validate() const;
};

struct MultimodalParams {
  Matrix raw_weights;  // 1 x 3, softmax-normalized over present modalities
  Matrix query;        // d'' x d_S
  Matrix key;          // d'' x d_S
  Matrix value;        // d'' x d_S
  Matrix visual_projection;  // d_S x d_vis, fixed random stub encoder for frames
  double lambda_mi = 0.1;
  double temperature = 0.1;

  static MultimodalParams init(int semantic_dim, int shared_dim, int visual_dim, Rng& rng);
  int shared_dim() const { return static_cast<int>(value.rows()); }
  int semantic_dim() const { return static_cast<int>(value.cols()); }
};

/// Normalized modality weights; absent modalities get 0.
std::array<double, kNumModalities> modality_weights(const MultimodalParams& params, const ModalityBundle& bundle);

Vector cross_modal_attention(const MultimodalParams& params, const Vector& h_m, const ModalityBundle& bundle);
Vector align_multimodal(const MultimodalParams& params, const ModalityBundle& bundle);

/// Text from the stub embedder, audio transcript (if any) through the same embedder,
/// visual features (if any) through the fixed projection. All L2-normalized.
ModalityBundle encode_modalities(const MultimodalParams& params, const EmbeddingProvider& provider, const Document& doc);

struct AlignmentLossParts {
  double distance = 0.0;
  double infonce_bound = 0.0;  // ln n - InfoNCE loss, <= ln n
  double total = 0.0;
};

/// Rows of `x` and `y` are paired modality embeddings (before W_v).
AlignmentLossParts alignment_loss(const MultimodalParams& params, const Matrix& x, const Matrix& y);

ad::Var alignment_loss_graph(const ad::Var& value_projection, const ad::Var& x, const ad::Var& y, double lambda_mi,
                             double temperature);

}  // namespace craf
