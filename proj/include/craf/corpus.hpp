#pragma once

#include "craf/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace craf {

enum class Sentiment : int { positive = 0, neutral = 1, negative = 2 };
inline constexpr int kNumSentiments = 3;

std::string_view sentiment_code(Sentiment s);  // "pos" | "neu" | "neg"
Sentiment parse_sentiment(std::string_view code);

struct Document {
  int source_id = 0;
  std::string text;
  std::int64_t timestamp = 0;
  /// Missing entries are stored as NaN.
  std::vector<double> metadata;
  std::optional<int> topic;
  std::optional<Sentiment> sentiment;
  /// Optional multimodal payloads: an audio transcript and a visual feature vector.
  std::optional<std::string> asr;
  std::optional<std::vector<double>> visual;

  bool operator==(const Document&) const;
};

struct Corpus {
  std::vector<Document> documents;
  int num_sources = 1;
  int num_topics = 1;
  int metadata_dim = 0;

  std::size_t size() const { return documents.size(); }
  bool empty() const { return documents.empty(); }
  std::vector<std::size_t> source_counts() const;
  /// Throws SchemaError unless every document is in range and every source is covered.
  void validate() const;
  /// Empty corpus with the same declared dimensions.
  Corpus like() const;
};

/// Lowercases ASCII and splits on runs of non-alphanumeric ASCII. Bytes >= 0x80
/// are kept inside tokens so UTF-8 text survives as opaque tokens.
std::vector<std::string> tokenize(std::string_view text);

// JSONL: header {"k","c","dm"} then one record per line.
Corpus read_corpus(std::istream& in);
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus load_corpus(const std::filesystem::path& path);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct CorpusStats {
  double mean_length = 0.0;
  double std_length = 1.0;
  std::unordered_set<std::string> vocabulary;

  /// Length statistics from `corpus`, vocabulary from all of its tokens.
  static CorpusStats from(const Corpus& corpus);
};

inline constexpr int kQualityDim = 4;
inline constexpr double kLengthZClamp = 5.0;

/// [length z-score in [-5, 5], OOV fraction in [0, 1], metadata completeness in
/// [0, 1], duplicate-token fraction in [0, 1)].
std::array<double, kQualityDim> compute_quality(const Document& doc, const CorpusStats& stats);

struct SplitResult {
  Corpus train;
  Corpus val;
  Corpus test;
};

/// Stratified by (source, topic) when topics are labeled. Strata with fewer
/// than 3 documents are pooled and split unstratified, with a warning.
SplitResult split(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed);

/// Knobs of the synthetic multi-source generator.
struct SynthSpec {
  int num_sources = 3;
  int num_topics = 3;
  int docs_per_source = 300;
  int vocab_size = 2000;
  /// Per-source vocabulary-shift strength in [0, 1]; a single value applies to all.
  std::vector<double> shift{0.0};
  /// Per-source fraction of tokens replaced by uniform vocabulary draws.
  std::vector<double> noise{0.0};
  /// Per-topic pull of the sentiment distribution towards class (topic mod 3).
  std::vector<double> sentiment_skew{0.3};
  int metadata_dim = 2;
  int min_length = 20;
  int max_length = 40;
  /// Fractions of non-noise tokens drawn from sentiment and topic blocks; the rest is background.
  double sentiment_rate = 0.2;
  double topic_rate = 0.5;
  std::int64_t start_time = 1700000000;
  std::uint64_t seed = 0;

  double shift_for(int source) const;
  double noise_for(int source) const;
  double skew_for(int topic) const;
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Deterministic in the spec (including seed).
Corpus synthesize_corpus(const SynthSpec& spec);

/// Name of synthetic vocabulary entry `index`; distinct for distinct indices.
std::string synth_word(int index);

}  // namespace craf
