#pragma once

// The complete model: encoders, fusion parameters, task heads and source
// prototypes, plus batch encoding, forward evaluation and checkpoints.

#include "craf/autodiff.hpp"
#include "craf/corpus.hpp"
#include "craf/encoders.hpp"
#include "craf/fusion.hpp"
#include "craf/multimodal.hpp"
#include "craf/objectives.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace craf {

inline constexpr const char* kCheckpointFormat = "craf-checkpoint/1";

struct ModelConfig {
  int tfidf_dim = 512;
  int semantic_dim = 128;
  int proj_dim = 64;
  int refine_layers = 3;
  int num_topics = 0;  // 0: take from the corpus
  double leaky_slope = kDefaultLeakySlope;
  FusionSwitches switches;
  bool use_traditional = true;
  bool use_semantic = true;
  /// Replace the semantic block with the aligned multimodal vector when a
  /// document carries "asr" or "vis" payloads.
  bool multimodal = false;
};

struct EncodedBatch {
  Matrix features;  // n x (d_T + d_S)
  Matrix meta;      // n x (d_m + 4), metadata (NaN -> 0) then quality vector
  std::vector<int> sources;
  std::vector<int> topics;      // -1 when unlabeled
  std::vector<int> sentiments;  // -1 when unlabeled

  std::size_t size() const { return sources.size(); }
  EncodedBatch rows(std::span<const std::size_t> index) const;
};

struct TensorRef {
  std::string name;
  Matrix* value;
  /// Weight matrices enter the L2 penalty; biases, gains and centroids do not.
  bool penalized;
};

struct CrafModel {
  ModelConfig config;
  int num_sources = 0;
  int metadata_dim = 0;
  TfidfModel tfidf;
  CorpusStats stats;
  std::shared_ptr<const EmbeddingProvider> provider;
  FusionParams fusion;
  TopicHead topic;
  SentimentHead sentiment;
  SourcePrototypes prototypes;
  std::optional<MultimodalParams> multimodal;

  int num_topics() const { return static_cast<int>(topic.centroids.rows()); }
  int input_dim() const { return tfidf.dim() + config.semantic_dim; }
  int meta_input_dim() const { return metadata_dim + kQualityDim; }

  std::vector<TensorRef> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;

  /// Builds encoders from `train` and initializes all parameters from `seed`.
  /// Topic centroids start as random rows and are usually re-seeded by k-means++.
  static CrafModel create(const Corpus& train, const ModelConfig& config, std::uint64_t seed,
                          std::shared_ptr<const EmbeddingProvider> provider = nullptr);
};

EncodedBatch encode_documents(const CrafModel& model, std::span<const Document> docs);
inline EncodedBatch encode_corpus(const CrafModel& model, const Corpus& corpus) {
  return encode_documents(model, corpus.documents);
}

struct ModelVars {
  FusionVars fusion;
  ad::Var centroids, sentiment_weight, sentiment_bias;
  std::vector<std::pair<std::string, ad::Var>> named;
  std::vector<ad::Var> penalized;
};

using TrainablePredicate = std::function<bool(const std::string&)>;
ModelVars bind_model(ad::Tape& tape, const CrafModel& model, const TrainablePredicate& trainable);

struct GraphOutputs {
  FusionOutputs fusion;
  ad::Var Q;  // n x C
  ad::Var S;  // n x 3
};

/// `prototypes` is K x D; pass model.prototypes.values() for inference.
GraphOutputs forward_graph(const ModelVars& vars, const CrafModel& model, const EncodedBatch& batch,
                           const Matrix& prototypes);

struct ForwardResult {
  Matrix z;      // n x d', refined representations
  Matrix alpha;  // K x K attention used for the batch
  Matrix gate;   // n x d'
  Matrix Q;      // n x C topic assignments
  Matrix S;      // n x 3 sentiment probabilities
};

ForwardResult forward(const CrafModel& model, const EncodedBatch& batch);
ForwardResult forward(const CrafModel& model, std::span<const Document> docs);

/// Runs the batch as if every document came from `source`.
ForwardResult forward_as_source(const CrafModel& model, const EncodedBatch& batch, int source);

void save_checkpoint(const CrafModel& model, const std::filesystem::path& path);
CrafModel load_checkpoint(const std::filesystem::path& path);

}  // namespace craf
