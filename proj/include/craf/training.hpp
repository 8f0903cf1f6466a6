#pragma once

// Gradients, finite-difference verification, the optimizer loop and few-shot
// adaptation to a new source.

#include "craf/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace craf {

/// Which tensors adaptation may change.
enum class FreezePolicy {
  shared,  // tune gate and heads; projection, attention, residual and refinement frozen
  heads,   // tune topic and sentiment heads only
  none,    // tune everything
};

struct TrainConfig {
  double learning_rate = 5e-3;
  int epochs = 30;
  int batch_size = 64;
  LossConfig loss;
  ModelConfig model;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;
  FreezePolicy freeze = FreezePolicy::shared;
  /// Train topic and sentiment on alternating batches instead of jointly.
  bool alternate_tasks = false;
  std::array<double, 3> split{0.7, 0.15, 0.15};
  int kmeans_restarts = 5;
  /// Reconstruction epochs (temporary linear decoder on z) before the centroids are placed.
  int pretrain_epochs = 30;
  /// Leading epochs that train only the topic and sentiment heads.
  int head_warmup_epochs = 5;
  int adapt_epochs = 30;
  double adapt_learning_rate = 5e-3;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

struct TensorGradient {
  std::string name;
  Matrix grad;
};

struct BackwardResult {
  LossBreakdown loss;
  std::vector<TensorGradient> grads;  // trainable tensors only, in CrafModel::tensors() order
};

/// Predicate over tensor names; the default trains every tensor.
TrainablePredicate all_trainable();
TrainablePredicate trainable_for(FreezePolicy policy);

/// Loss and exact gradients on `batch` with targets `P` held fixed and the
/// current prototypes treated as constants. Throws NumericalError naming the
/// tensor when a gradient is non-finite.
BackwardResult backward(const CrafModel& model, const EncodedBatch& batch, const Matrix& P, const LossConfig& config,
                        const TrainablePredicate& trainable = all_trainable());
/// Same, with targets derived from the batch's own topic assignments.
BackwardResult backward(const CrafModel& model, const EncodedBatch& batch, const LossConfig& config);

/// Loss only.
LossBreakdown evaluate_loss(const CrafModel& model, const EncodedBatch& batch, const Matrix& P, const LossConfig& config);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  int coordinates = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
  bool passed(double tolerance = 1e-4) const;
};

/// Central differences on at least `min_coords` sampled entries of every tensor
/// (all entries when the tensor is smaller), compared against backward().
/// Relative error is |a - b| / max(|a|, |b|, 1e-6).
GradCheckReport finite_diff_check(const CrafModel& model, const EncodedBatch& batch, const LossConfig& config,
                                  double eps = 1e-5, std::uint64_t seed = 0, int min_coords = 32);

/// Tiny reference model: K=2, d'=4, C=2, d_T=16, d_S=8, batch of 4.
TrainConfig tiny_reference_config();

struct ReferenceProblem {
  CrafModel model;
  EncodedBatch batch;  // two documents per source, all labeled
};

/// Builds the reference model from a small synthetic corpus with prototypes
/// already observed, so every tensor has a nonzero gradient path.
ReferenceProblem tiny_reference_problem(const TrainConfig& config, std::uint64_t seed);

/// Adam with global-norm clipping over the model's tensors.
class AdamOptimizer {
 public:
  AdamOptimizer(double learning_rate, double beta1, double beta2, double eps, double clip_norm);
  /// Returns the gradient norm before clipping.
  double step(CrafModel& model, const std::vector<TensorGradient>& grads);
  /// Same over an explicit set of named tensors.
  double step(const std::vector<std::pair<std::string, Matrix*>>& targets, const std::vector<TensorGradient>& grads);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_, clip_;
  struct Moments {
    Matrix m, v;
    int t = 0;
  };
  std::vector<std::pair<std::string, Moments>> state_;
  Moments& moments(const std::string& name, const Matrix& like);
};

/// k-means++ seeding followed by Lloyd iterations; best of `restarts` by inertia.
Matrix kmeans(const Matrix& points, int k, int restarts, std::uint64_t seed, int max_iter = 100);

/// One in-order prototype sweep over `data`, reconstruction pretraining of the
/// fusion tensors, then k-means++ on the refined representations to place the
/// topic centroids.
void warm_start(CrafModel& model, const EncodedBatch& data, const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown train;
  LossBreakdown val;
  double val_ari = 0.0;
  double val_f1 = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool diverged = false;

  void write_csv(std::ostream& out) const;
  void save_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  CrafModel model;
  TrainHistory history;
};

TrainResult train(const Corpus& train_set, const Corpus& val_set, const TrainConfig& config,
                  std::shared_ptr<const EmbeddingProvider> provider = nullptr);
/// Splits `corpus` by config.split (seeded) and trains on the train part.
TrainResult train(const Corpus& corpus, const TrainConfig& config, std::shared_ptr<const EmbeddingProvider> provider = nullptr);

struct Predictions {
  std::vector<int> topics;
  std::vector<int> sentiments;
};

Predictions predict(const CrafModel& model, const EncodedBatch& batch);
Predictions predict(const ForwardResult& result);

struct BatchMetrics {
  double ari = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::array<double, 3> precision{};
  std::array<double, 3> recall{};
};

/// Topic ARI and sentiment scores over the labeled rows of `batch`.
BatchMetrics score(const CrafModel& model, const EncodedBatch& batch);

/// Adds one source for `new_source` (all of its documents are treated as that
/// source), sets its prototype from every new document, then fine-tunes the
/// tensors allowed by config.freeze on `n_labels` topic-stratified labeled
/// documents. With n_labels = 0 only the prototype is added.
CrafModel adapt(const CrafModel& model, const Corpus& new_source, int n_labels, const TrainConfig& config);

/// Documents of `corpus` relabeled to `source` (every source id replaced).
Corpus as_source(const Corpus& corpus, int source, int num_sources);

}  // namespace craf
