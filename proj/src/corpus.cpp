#include "craf/corpus.hpp"
#include "craf/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace craf {

using nlohmann::ordered_json;

std::string_view sentiment_code(Sentiment s) {
  switch (s) {
    case Sentiment::positive: return "pos";
    case Sentiment::neutral: return "neu";
    case Sentiment::negative: return "neg";
  }
  return "neu";
}

Sentiment parse_sentiment(std::string_view code) {
  if (code == "pos") return Sentiment::positive;
  if (code == "neu") return Sentiment::neutral;
  if (code == "neg") return Sentiment::negative;
  throw SchemaError("unknown sentiment code '" + std::string(code) + "'");
}

namespace {
bool same_values(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    if (a[i] != b[i]) return false;
  }
  return true;
}
}  // namespace

bool Document::operator==(const Document& o) const {
  if (visual.has_value() != o.visual.has_value()) return false;
  if (visual && !same_values(*visual, *o.visual)) return false;
  return source_id == o.source_id && text == o.text && timestamp == o.timestamp &&
         same_values(metadata, o.metadata) && topic == o.topic && sentiment == o.sentiment && asr == o.asr;
}

std::vector<std::size_t> Corpus::source_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_sources, 0)), 0);
  for (const auto& d : documents)
    if (d.source_id >= 0 && d.source_id < num_sources) ++counts[static_cast<std::size_t>(d.source_id)];
  return counts;
}

void Corpus::validate() const {
  if (num_sources < 1 || num_topics < 1 || metadata_dim < 0)
    throw SchemaError("corpus header must declare k >= 1, c >= 1, dm >= 0");
  for (std::size_t i = 0; i < documents.size(); ++i) {
    const auto& d = documents[i];
    const std::string where = "document " + std::to_string(i);
    if (d.source_id < 0 || d.source_id >= num_sources) throw SchemaError(where + ": source id out of range");
    if (static_cast<int>(d.metadata.size()) != metadata_dim) throw SchemaError(where + ": metadata dimension mismatch");
    if (d.topic && (*d.topic < 0 || *d.topic >= num_topics)) throw SchemaError(where + ": topic label out of range");
  }
  auto counts = source_counts();
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] == 0) throw SchemaError("source " + std::to_string(k) + " has no documents");
}

Corpus Corpus::like() const {
  Corpus c;
  c.num_sources = num_sources;
  c.num_topics = num_topics;
  c.metadata_dim = metadata_dim;
  return c;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || std::isalnum(c)) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

std::vector<double> parse_real_array(const ordered_json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + " must be an array");
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& v : j) {
    if (v.is_null()) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw ParseError(what + " entries must be numbers or null");
    }
  }
  return out;
}

ordered_json real_array(const std::vector<double>& values) {
  ordered_json arr = ordered_json::array();
  for (double v : values) {
    if (std::isfinite(v)) arr.push_back(v);
    else arr.push_back(nullptr);
  }
  return arr;
}

Document parse_document(const ordered_json& j) {
  if (!j.is_object()) throw ParseError("record must be a JSON object");
  Document d;
  d.source_id = j.at("src").get<int>();
  d.text = j.at("text").get<std::string>();
  d.timestamp = j.contains("ts") ? j.at("ts").get<std::int64_t>() : 0;
  d.metadata = j.contains("meta") ? parse_real_array(j.at("meta"), "meta") : std::vector<double>{};
  if (j.contains("topic") && !j.at("topic").is_null()) d.topic = j.at("topic").get<int>();
  if (j.contains("sent") && !j.at("sent").is_null()) d.sentiment = parse_sentiment(j.at("sent").get<std::string>());
  if (j.contains("asr") && !j.at("asr").is_null()) d.asr = j.at("asr").get<std::string>();
  if (j.contains("vis") && !j.at("vis").is_null()) d.visual = parse_real_array(j.at("vis"), "vis");
  return d;
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      try {
        corpus.num_sources = j.at("k").get<int>();
        corpus.num_topics = j.at("c").get<int>();
        corpus.metadata_dim = j.at("dm").get<int>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": invalid header: " + e.what());
      }
      have_header = true;
      continue;
    }
    Document d;
    try {
      d = parse_document(j);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (static_cast<int>(d.metadata.size()) != corpus.metadata_dim)
      throw SchemaError("line " + std::to_string(line_no) + ": metadata has " + std::to_string(d.metadata.size()) +
                        " entries, header declares " + std::to_string(corpus.metadata_dim));
    corpus.documents.push_back(std::move(d));
  }
  if (!have_header) throw ParseError("corpus has no header record");
  return corpus;
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  ordered_json header;
  header["k"] = corpus.num_sources;
  header["c"] = corpus.num_topics;
  header["dm"] = corpus.metadata_dim;
  out << header.dump() << '\n';
  for (const auto& d : corpus.documents) {
    ordered_json j;
    j["src"] = d.source_id;
    j["text"] = d.text;
    j["ts"] = d.timestamp;
    j["meta"] = real_array(d.metadata);
    j["topic"] = d.topic ? ordered_json(*d.topic) : ordered_json(nullptr);
    j["sent"] = d.sentiment ? ordered_json(std::string(sentiment_code(*d.sentiment))) : ordered_json(nullptr);
    if (d.asr) j["asr"] = *d.asr;
    if (d.visual) j["vis"] = real_array(*d.visual);
    out << j.dump() << '\n';
  }
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file " + path.string());
  return read_corpus(in);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  write_corpus(corpus, out);
}

CorpusStats CorpusStats::from(const Corpus& corpus) {
  CorpusStats stats;
  if (corpus.empty()) return stats;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (const auto& d : corpus.documents) {
    auto tokens = tokenize(d.text);
    const double len = static_cast<double>(tokens.size());
    sum += len;
    sum_sq += len * len;
    for (auto& t : tokens) stats.vocabulary.insert(std::move(t));
  }
  const double n = static_cast<double>(corpus.size());
  stats.mean_length = sum / n;
  stats.std_length = std::sqrt(std::max(sum_sq / n - stats.mean_length * stats.mean_length, 0.0));
  return stats;
}

std::array<double, kQualityDim> compute_quality(const Document& doc, const CorpusStats& stats) {
  const auto tokens = tokenize(doc.text);
  const double len = static_cast<double>(tokens.size());

  double z = (len - stats.mean_length) / std::max(stats.std_length, 1e-9);
  if (!std::isfinite(z)) z = 0.0;
  z = std::clamp(z, -kLengthZClamp, kLengthZClamp);

  double oov = 0.0;
  double dup = 0.0;
  if (!tokens.empty()) {
    std::size_t missing = 0;
    std::unordered_set<std::string_view> seen;
    for (const auto& t : tokens) {
      if (!stats.vocabulary.contains(t)) ++missing;
      seen.insert(t);
    }
    oov = static_cast<double>(missing) / len;
    dup = static_cast<double>(tokens.size() - seen.size()) / len;
  }

  double completeness = 1.0;
  if (!doc.metadata.empty()) {
    std::size_t present = 0;
    for (double v : doc.metadata)
      if (std::isfinite(v)) ++present;
    completeness = static_cast<double>(present) / static_cast<double>(doc.metadata.size());
  }
  return {z, oov, completeness, dup};
}

SplitResult split(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& d = corpus.documents[i];
    strata[{d.source_id, d.topic.value_or(-1)}].push_back(i);
  }
  std::vector<std::size_t> pooled;
  std::vector<std::vector<std::size_t>> groups;
  for (auto& [key, members] : strata) {
    if (members.size() < 3) {
      warn("split: stratum (source " + std::to_string(key.first) + ", topic " + std::to_string(key.second) +
           ") has fewer than 3 documents; splitting it unstratified");
      pooled.insert(pooled.end(), members.begin(), members.end());
    } else {
      groups.push_back(std::move(members));
    }
  }
  if (!pooled.empty()) groups.push_back(std::move(pooled));

  // Each document gets a quantile position inside its shuffled group; sorting
  // by position yields a proportional allocation per group with exact global counts.
  Rng rng(derive_seed(seed, "split"));
  struct Slot {
    double position;
    double tiebreak;
    std::size_t index;
  };
  std::vector<Slot> slots;
  slots.reserve(corpus.size());
  for (auto& g : groups) {
    rng.shuffle(g);
    for (std::size_t r = 0; r < g.size(); ++r)
      slots.push_back({(static_cast<double>(r) + 0.5) / static_cast<double>(g.size()), rng.uniform(), g[r]});
  }
  std::sort(slots.begin(), slots.end(), [](const Slot& a, const Slot& b) {
    if (a.position != b.position) return a.position < b.position;
    return a.tiebreak < b.tiebreak;
  });

  const auto n = static_cast<long long>(corpus.size());
  const long long n_train = std::min(n, std::llround(ratios[0] * static_cast<double>(n)));
  const long long n_val = std::min(n - n_train, std::llround(ratios[1] * static_cast<double>(n)));

  std::vector<int> assignment(corpus.size(), 2);
  for (long long i = 0; i < n; ++i) {
    const auto& s = slots[static_cast<std::size_t>(i)];
    assignment[s.index] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  }
  SplitResult out{corpus.like(), corpus.like(), corpus.like()};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Corpus& target = assignment[i] == 0 ? out.train : (assignment[i] == 1 ? out.val : out.test);
    target.documents.push_back(corpus.documents[i]);
  }
  return out;
}

}  // namespace craf
