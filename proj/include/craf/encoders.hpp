#pragma once

#include "craf/common.hpp"
#include "craf/corpus.hpp"

#include <chrono>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace craf {

/// Traditional feature space: top-d_T vocabulary with smoothed idf.
class TfidfModel {
 public:
  TfidfModel() = default;
  TfidfModel(std::vector<std::string> terms, Vector idf);

  /// Vocabulary is the `max_features` most frequent tokens (ties broken
  /// lexicographically); idf(t) = ln((1 + N) / (1 + df(t))) + 1.
  static TfidfModel fit(const Corpus& corpus, std::size_t max_features);

  /// Term frequency times idf, L2-normalized. Zero vector when no token is in vocabulary.
  Vector encode(std::string_view text) const;

  int dim() const { return static_cast<int>(terms_.size()); }
  const std::vector<std::string>& terms() const { return terms_; }
  const Vector& idf() const { return idf_; }
  /// Index of `term`, or -1.
  int index_of(const std::string& term) const;

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, int> index_;
  Vector idf_;
};

/// Source of semantic embeddings. Implementations must be deterministic.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual int dim() const = 0;
  /// Raw (unnormalized) embeddings, one per input text.
  virtual std::vector<Vector> embed(std::span<const std::string> texts) const = 0;
};

/// Signed-hash bag of character 3-grams (per token, with boundary markers).
class HashedNgramEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x9e3779b97f4a7c15ULL;

  explicit HashedNgramEmbedder(int dim = 128, std::uint64_t seed = kDefaultSeed) : dim_(dim), seed_(seed) {}
  int dim() const override { return dim_; }
  std::vector<Vector> embed(std::span<const std::string> texts) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

struct RemoteEmbeddingConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string path = "/embed";
  std::chrono::milliseconds timeout{5000};
  int dim = 128;
};

/// POSTs {"texts": [...]} and expects {"vectors": [[...], ...]}.
/// Any transport or protocol failure raises TransportError.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(RemoteEmbeddingConfig config) : config_(std::move(config)) {}
  int dim() const override { return config_.dim; }
  std::vector<Vector> embed(std::span<const std::string> texts) const override;

 private:
  RemoteEmbeddingConfig config_;
};

Vector encode_traditional(const TfidfModel& model, const Document& doc);
/// Provider output scaled to unit L2 norm (zero vectors stay zero).
Vector encode_semantic(const EmbeddingProvider& provider, const Document& doc);
/// [traditional; semantic].
Vector encode_dual(const TfidfModel& model, const EmbeddingProvider& provider, const Document& doc);

}  // namespace craf
