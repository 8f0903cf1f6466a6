#include "craf/encoders.hpp"
#include "craf/rng.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

namespace craf {

TfidfModel::TfidfModel(std::vector<std::string> terms, Vector idf) : terms_(std::move(terms)), idf_(std::move(idf)) {
  if (static_cast<Eigen::Index>(terms_.size()) != idf_.size()) throw SchemaError("tfidf: vocabulary and idf sizes differ");
  for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], static_cast<int>(i));
}

TfidfModel TfidfModel::fit(const Corpus& corpus, std::size_t max_features) {
  if (corpus.empty()) throw SchemaError("tfidf: cannot fit on an empty corpus");
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> counts;  // term -> (frequency, df)
  std::size_t total = 0;
  for (const auto& d : corpus.documents) {
    auto tokens = tokenize(d.text);
    total += tokens.size();
    std::unordered_set<std::string> seen;
    for (auto& t : tokens) {
      auto& c = counts[t];
      ++c.first;
      if (seen.insert(t).second) ++c.second;
    }
  }
  if (total == 0) throw SchemaError("tfidf: corpus contains no tokens");

  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    return a.first < b.first;
  });
  if (ranked.size() > max_features) ranked.resize(max_features);

  const double n = static_cast<double>(corpus.size());
  std::vector<std::string> terms;
  Vector idf(static_cast<Eigen::Index>(ranked.size()));
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    terms.push_back(ranked[i].first);
    idf(static_cast<Eigen::Index>(i)) = std::log((1.0 + n) / (1.0 + static_cast<double>(ranked[i].second.second))) + 1.0;
  }
  return TfidfModel(std::move(terms), std::move(idf));
}

int TfidfModel::index_of(const std::string& term) const {
  auto it = index_.find(term);
  return it == index_.end() ? -1 : it->second;
}

Vector TfidfModel::encode(std::string_view text) const {
  Vector v = Vector::Zero(dim());
  for (const auto& t : tokenize(text)) {
    auto it = index_.find(t);
    if (it != index_.end()) v(it->second) += 1.0;
  }
  v = v.cwiseProduct(idf_);
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

std::vector<Vector> HashedNgramEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    Vector v = Vector::Zero(dim_);
    for (const auto& token : tokenize(text)) {
      const std::string padded = "#" + token + "#";
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3), seed_);
        const auto bucket = static_cast<Eigen::Index>(h % static_cast<std::uint64_t>(dim_));
        v(bucket) += (h >> 63) ? -1.0 : 1.0;
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<Vector> RemoteEmbeddingProvider::embed(std::span<const std::string> texts) const {
  httplib::Client client(config_.host, config_.port);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());

  nlohmann::json body;
  body["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  auto res = client.Post(config_.path, body.dump(), "application/json");
  if (!res) throw TransportError("embedding provider: " + httplib::to_string(res.error()));
  if (res->status != 200) throw TransportError("embedding provider: HTTP status " + std::to_string(res->status));

  std::vector<Vector> out;
  try {
    const auto reply = nlohmann::json::parse(res->body);
    const auto& vectors = reply.at("vectors");
    if (vectors.size() != texts.size()) throw TransportError("embedding provider: expected " + std::to_string(texts.size()) + " vectors");
    for (const auto& row : vectors) {
      if (static_cast<int>(row.size()) != config_.dim) throw TransportError("embedding provider: wrong vector dimension");
      Vector v(config_.dim);
      for (int i = 0; i < config_.dim; ++i) v(i) = row.at(static_cast<std::size_t>(i)).get<double>();
      if (!v.allFinite()) throw TransportError("embedding provider: non-finite vector");
      out.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("embedding provider: malformed reply: ") + e.what());
  }
  return out;
}

Vector encode_traditional(const TfidfModel& model, const Document& doc) { return model.encode(doc.text); }

Vector encode_semantic(const EmbeddingProvider& provider, const Document& doc) {
  Vector v = std::move(provider.embed(std::span<const std::string>(&doc.text, 1)).front());
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

Vector encode_dual(const TfidfModel& model, const EmbeddingProvider& provider, const Document& doc) {
  Vector t = encode_traditional(model, doc);
  Vector s = encode_semantic(provider, doc);
  Vector out(t.size() + s.size());
  out << t, s;
  return out;
}

}  // namespace craf
