#include "craf/corpus.hpp"
#include "craf/rng.hpp"

#include <algorithm>
#include <cmath>

namespace craf {

namespace {

// Multiplicative reweighting factor is exp(kShiftScale * shift * xi), xi ~ N(0, 1).
constexpr double kShiftScale = 3.0;
constexpr double kZipfExponent = 0.7;
constexpr double kTopicRegion = 0.5;
constexpr double kSentimentRegion = 0.15;

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh", "tr", "pl", "gr", "st"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u"};
constexpr int kSyllables = 100;

std::string syllable(int i) { return std::string(kOnsets[i / 5]) + kVowels[i % 5]; }

double pick(const std::vector<double>& values, int i) {
  if (values.empty()) return 0.0;
  if (values.size() == 1) return values[0];
  return values[static_cast<std::size_t>(i)];
}

struct Block {
  int begin = 0;
  int end = 0;
};

/// Cumulative distribution over the whole vocabulary.
class Sampler {
 public:
  explicit Sampler(const std::vector<double>& weights) : cumulative_(weights.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      cumulative_[i] = acc;
    }
  }
  int draw(Rng& rng) const {
    const double target = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), target);
    if (it == cumulative_.end()) --it;
    return static_cast<int>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

std::vector<double> zipf_on(Block block, int vocab) {
  std::vector<double> w(static_cast<std::size_t>(vocab), 0.0);
  for (int i = block.begin; i < block.end; ++i) w[static_cast<std::size_t>(i)] = 1.0 / std::pow(i - block.begin + 1.0, kZipfExponent);
  return w;
}

}  // namespace

std::string synth_word(int index) {
  // Three base-100 syllable digits after a bijective scramble of [0, 10^6).
  const long long scrambled = (static_cast<long long>(index) * 7919LL + 104729LL) % 1000000LL;
  const int a = static_cast<int>(scrambled % kSyllables);
  const int b = static_cast<int>((scrambled / kSyllables) % kSyllables);
  const int c = static_cast<int>((scrambled / (kSyllables * kSyllables)) % kSyllables);
  return syllable(a) + syllable(b) + syllable(c);
}

double SynthSpec::shift_for(int source) const { return pick(shift, source); }
double SynthSpec::noise_for(int source) const { return pick(noise, source); }
double SynthSpec::skew_for(int topic) const { return pick(sentiment_skew, topic); }

void SynthSpec::validate() const {
  auto in_unit = [](const std::vector<double>& v, const char* what, int expected) {
    if (v.size() > 1 && static_cast<int>(v.size()) != expected)
      throw ConfigError(std::string(what) + " must have 1 or " + std::to_string(expected) + " entries");
    for (double x : v)
      if (!(x >= 0.0 && x <= 1.0)) throw ConfigError(std::string(what) + " values must lie in [0, 1]");
  };
  if (num_sources < 1) throw ConfigError("num_sources must be >= 1");
  if (num_topics < 1) throw ConfigError("num_topics must be >= 1");
  if (docs_per_source < 1) throw ConfigError("docs_per_source must be >= 1");
  if (metadata_dim < 0) throw ConfigError("metadata_dim must be >= 0");
  if (min_length < 1 || max_length < min_length) throw ConfigError("need 1 <= min_length <= max_length");
  if (vocab_size < 10 * (num_topics + kNumSentiments))
    throw ConfigError("vocab_size too small for the requested number of topics");
  in_unit(shift, "shift", num_sources);
  in_unit(noise, "noise", num_sources);
  in_unit(sentiment_skew, "sentiment_skew", num_topics);
  if (!(sentiment_rate >= 0 && topic_rate >= 0 && sentiment_rate + topic_rate <= 1.0))
    throw ConfigError("sentiment_rate and topic_rate must be nonnegative with sum <= 1");
}

Corpus synthesize_corpus(const SynthSpec& spec) {
  spec.validate();
  const int V = spec.vocab_size;
  const int C = spec.num_topics;
  const int K = spec.num_sources;

  const int topic_span = static_cast<int>(V * kTopicRegion) / C;
  const int sent_begin = topic_span * C;
  const int sent_span = static_cast<int>(V * kSentimentRegion) / kNumSentiments;
  const Block background{sent_begin + sent_span * kNumSentiments, V};

  std::vector<std::string> words(static_cast<std::size_t>(V));
  for (int i = 0; i < V; ++i) words[static_cast<std::size_t>(i)] = synth_word(i);

  std::vector<std::vector<double>> topic_base;
  for (int c = 0; c < C; ++c) topic_base.push_back(zipf_on({c * topic_span, (c + 1) * topic_span}, V));
  std::vector<std::vector<double>> sent_base;
  for (int s = 0; s < kNumSentiments; ++s)
    sent_base.push_back(zipf_on({sent_begin + s * sent_span, sent_begin + (s + 1) * sent_span}, V));
  const std::vector<double> background_base = zipf_on(background, V);

  struct SourceModel {
    std::vector<Sampler> topics;
    std::vector<Sampler> sentiments;
    std::vector<Sampler> background;
  };
  std::vector<SourceModel> sources;
  Rng shift_rng(derive_seed(spec.seed, "synth/shift"));
  for (int k = 0; k < K; ++k) {
    std::vector<double> factor(static_cast<std::size_t>(V));
    const double strength = spec.shift_for(k);
    for (auto& f : factor) f = std::exp(kShiftScale * strength * shift_rng.normal());
    auto reweight = [&](const std::vector<double>& base) {
      std::vector<double> w(base.size());
      for (std::size_t i = 0; i < base.size(); ++i) w[i] = base[i] * factor[i];
      return Sampler(w);
    };
    SourceModel m;
    for (const auto& b : topic_base) m.topics.push_back(reweight(b));
    for (const auto& b : sent_base) m.sentiments.push_back(reweight(b));
    m.background.push_back(reweight(background_base));
    sources.push_back(std::move(m));
  }

  Corpus corpus;
  corpus.num_sources = K;
  corpus.num_topics = C;
  corpus.metadata_dim = spec.metadata_dim;
  Rng rng(derive_seed(spec.seed, "synth/documents"));
  const double horizon = 7.0 * 86400.0;
  for (int k = 0; k < K; ++k) {
    const double noise = spec.noise_for(k);
    // Balanced topic sequence, shuffled.
    std::vector<int> topics(static_cast<std::size_t>(spec.docs_per_source));
    for (std::size_t i = 0; i < topics.size(); ++i) topics[i] = static_cast<int>(i % static_cast<std::size_t>(C));
    rng.shuffle(topics);
    for (int i = 0; i < spec.docs_per_source; ++i) {
      Document d;
      d.source_id = k;
      const int topic = topics[static_cast<std::size_t>(i)];
      const double skew = spec.skew_for(topic);
      std::array<double, kNumSentiments> sent_w{};
      for (int s = 0; s < kNumSentiments; ++s) sent_w[s] = (1.0 - skew) / kNumSentiments + (s == topic % kNumSentiments ? skew : 0.0);
      const int sentiment = static_cast<int>(rng.categorical(sent_w));
      d.topic = topic;
      d.sentiment = static_cast<Sentiment>(sentiment);

      const int length = spec.min_length + static_cast<int>(rng.index(static_cast<std::size_t>(spec.max_length - spec.min_length + 1)));
      std::string text;
      for (int t = 0; t < length; ++t) {
        int w;
        if (rng.uniform() < noise) {
          w = static_cast<int>(rng.index(static_cast<std::size_t>(V)));
        } else {
          const double u = rng.uniform();
          if (u < spec.sentiment_rate) w = sources[k].sentiments[sentiment].draw(rng);
          else if (u < spec.sentiment_rate + spec.topic_rate) w = sources[k].topics[topic].draw(rng);
          else w = sources[k].background[0].draw(rng);
        }
        if (!text.empty()) text.push_back(' ');
        text += words[static_cast<std::size_t>(w)];
      }
      d.text = std::move(text);
      d.timestamp = spec.start_time +
                    static_cast<std::int64_t>(horizon * (i + rng.uniform()) / spec.docs_per_source);

      d.metadata.resize(static_cast<std::size_t>(spec.metadata_dim));
      for (int j = 0; j < spec.metadata_dim; ++j) {
        double v;
        if (j == 0) v = std::clamp(1.0 - noise + 0.1 * rng.normal(), 0.0, 1.0);  // credibility
        else if (j == 1) v = 0.5 * k / std::max(K - 1, 1) + 0.3 * rng.normal();   // platform engagement
        else v = rng.normal();
        if (rng.uniform() < 0.2 * noise) v = std::numeric_limits<double>::quiet_NaN();
        d.metadata[static_cast<std::size_t>(j)] = v;
      }
      corpus.documents.push_back(std::move(d));
    }
  }
  return corpus;
}

}  // namespace craf
