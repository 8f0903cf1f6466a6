#include "craf/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace craf {

using nlohmann::json;

EncodedBatch EncodedBatch::rows(std::span<const std::size_t> index) const {
  EncodedBatch out;
  out.features.resize(static_cast<Eigen::Index>(index.size()), features.cols());
  out.meta.resize(static_cast<Eigen::Index>(index.size()), meta.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(index[r]);
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(i);
    out.meta.row(static_cast<Eigen::Index>(r)) = meta.row(i);
    out.sources.push_back(sources[index[r]]);
    out.topics.push_back(topics[index[r]]);
    out.sentiments.push_back(sentiments[index[r]]);
  }
  return out;
}

std::vector<TensorRef> CrafModel::tensors() {
  std::vector<TensorRef> out;
  for (auto& [name, m] : named_tensors(fusion)) {
    const bool penalized = name == "fusion.projection" || name == "fusion.gate_weight" || name == "fusion.residual" ||
                           name.ends_with(".weight");
    out.push_back({name, m, penalized});
  }
  out.push_back({"topic.centroids", &topic.centroids, false});
  out.push_back({"sentiment.weight", &sentiment.weight, true});
  out.push_back({"sentiment.bias", &sentiment.bias, false});
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> CrafModel::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& t : const_cast<CrafModel*>(this)->tensors()) out.emplace_back(t.name, t.value);
  return out;
}

CrafModel CrafModel::create(const Corpus& train, const ModelConfig& config, std::uint64_t seed,
                            std::shared_ptr<const EmbeddingProvider> provider) {
  if (!config.use_traditional && !config.use_semantic)
    throw ConfigError("at least one of the traditional and semantic encoders must be enabled");
  CrafModel m;
  m.config = config;
  m.num_sources = train.num_sources;
  m.metadata_dim = train.metadata_dim;
  m.tfidf = TfidfModel::fit(train, static_cast<std::size_t>(config.tfidf_dim));
  m.stats = CorpusStats::from(train);
  m.provider = provider ? std::move(provider) : std::make_shared<HashedNgramEmbedder>(config.semantic_dim);
  if (m.provider->dim() != config.semantic_dim) throw ConfigError("embedding provider dimension differs from semantic_dim");

  const int C = config.num_topics > 0 ? config.num_topics : train.num_topics;
  if (C < 2) throw ConfigError("need at least 2 topics");

  Rng fusion_rng(derive_seed(seed, "init/fusion"));
  m.fusion = FusionParams::init(m.input_dim(), config.proj_dim, m.meta_input_dim(), config.refine_layers, fusion_rng);
  m.fusion.leaky_slope = config.leaky_slope;

  Rng head_rng(derive_seed(seed, "init/heads"));
  m.topic.centroids = Matrix(C, config.proj_dim);
  for (Eigen::Index j = 0; j < m.topic.centroids.cols(); ++j)
    for (Eigen::Index i = 0; i < C; ++i) m.topic.centroids(i, j) = head_rng.normal();
  m.sentiment.weight = glorot_uniform(kNumSentiments, config.proj_dim, head_rng);
  m.sentiment.bias = Matrix::Zero(1, kNumSentiments);
  m.prototypes = SourcePrototypes(m.num_sources, m.input_dim());

  if (config.multimodal) {
    int visual_dim = 0;
    for (const auto& d : train.documents)
      if (d.visual) {
        visual_dim = static_cast<int>(d.visual->size());
        break;
      }
    Rng mm_rng(derive_seed(seed, "init/multimodal"));
    m.multimodal = MultimodalParams::init(config.semantic_dim, config.semantic_dim, visual_dim, mm_rng);
  }
  return m;
}

EncodedBatch encode_documents(const CrafModel& model, std::span<const Document> docs) {
  const auto n = static_cast<Eigen::Index>(docs.size());
  const int dt = model.tfidf.dim();
  const int ds = model.config.semantic_dim;
  EncodedBatch batch;
  batch.features = Matrix::Zero(n, dt + ds);
  batch.meta = Matrix::Zero(n, model.meta_input_dim());

  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(d.text);
  std::vector<Vector> semantic;
  if (model.config.use_semantic && !docs.empty()) semantic = model.provider->embed(texts);

  for (Eigen::Index i = 0; i < n; ++i) {
    const Document& d = docs[static_cast<std::size_t>(i)];
    if (d.source_id < 0 || d.source_id >= model.num_sources)
      throw SchemaError("document source id " + std::to_string(d.source_id) + " outside the model's " +
                        std::to_string(model.num_sources) + " sources");
    if (static_cast<int>(d.metadata.size()) != model.metadata_dim) throw SchemaError("metadata dimension mismatch");
    if (model.config.use_traditional) batch.features.row(i).head(dt) = model.tfidf.encode(d.text).transpose();
    if (model.config.use_semantic) {
      Vector s = semantic[static_cast<std::size_t>(i)];
      if (model.multimodal && (d.asr || d.visual))
        s = align_multimodal(*model.multimodal, encode_modalities(*model.multimodal, *model.provider, d));
      const double norm = s.norm();
      if (norm > 0.0) s /= norm;
      batch.features.row(i).tail(ds) = s.transpose();
    }
    for (int j = 0; j < model.metadata_dim; ++j) {
      const double v = d.metadata[static_cast<std::size_t>(j)];
      batch.meta(i, j) = std::isfinite(v) ? v : 0.0;
    }
    const auto quality = compute_quality(d, model.stats);
    for (int j = 0; j < kQualityDim; ++j) batch.meta(i, model.metadata_dim + j) = quality[static_cast<std::size_t>(j)];
    batch.sources.push_back(d.source_id);
    batch.topics.push_back(d.topic.value_or(-1));
    batch.sentiments.push_back(d.sentiment ? static_cast<int>(*d.sentiment) : -1);
  }
  return batch;
}

ModelVars bind_model(ad::Tape& tape, const CrafModel& model, const TrainablePredicate& trainable) {
  ModelVars v;
  v.fusion = bind_fusion(tape, model.fusion, trainable);
  auto bind = [&](const std::string& name, const Matrix& m) {
    return trainable(name) ? tape.parameter(m) : tape.constant(m);
  };
  v.centroids = bind("topic.centroids", model.topic.centroids);
  v.sentiment_weight = bind("sentiment.weight", model.sentiment.weight);
  v.sentiment_bias = bind("sentiment.bias", model.sentiment.bias);

  const FusionVars& f = v.fusion;
  v.named = {{"fusion.projection", f.projection}, {"fusion.attention", f.attention},
             {"fusion.gate_weight", f.gate_weight}, {"fusion.gate_bias", f.gate_bias},
             {"fusion.residual", f.residual}};
  for (std::size_t l = 0; l < f.layers.size(); ++l) {
    const std::string prefix = "fusion.refine" + std::to_string(l) + ".";
    v.named.emplace_back(prefix + "weight", f.layers[l].weight);
    v.named.emplace_back(prefix + "bias", f.layers[l].bias);
    v.named.emplace_back(prefix + "gain", f.layers[l].gain);
    v.named.emplace_back(prefix + "shift", f.layers[l].shift);
  }
  v.named.emplace_back("topic.centroids", v.centroids);
  v.named.emplace_back("sentiment.weight", v.sentiment_weight);
  v.named.emplace_back("sentiment.bias", v.sentiment_bias);

  v.penalized = {f.projection, f.gate_weight, f.residual};
  for (const auto& layer : f.layers) v.penalized.push_back(layer.weight);
  v.penalized.push_back(v.sentiment_weight);
  return v;
}

GraphOutputs forward_graph(const ModelVars& vars, const CrafModel& model, const EncodedBatch& batch,
                           const Matrix& prototypes) {
  ad::Tape& tape = *vars.centroids.tape();
  ad::Var x = tape.constant(batch.features);
  ad::Var meta = tape.constant(batch.meta);
  ad::Var protos = tape.constant(prototypes);
  GraphOutputs out;
  FusionSettings settings{model.fusion.leaky_slope, model.fusion.base_sources, model.config.switches};
  out.fusion = fusion_graph(vars.fusion, x, meta, batch.sources, protos, settings);
  out.Q = topic_distribution_graph(out.fusion.z, vars.centroids);
  out.S = sentiment_probs_graph(out.fusion.z, vars.sentiment_weight, vars.sentiment_bias);
  return out;
}

ForwardResult forward(const CrafModel& model, const EncodedBatch& batch) {
  ad::Tape tape;
  ModelVars vars = bind_model(tape, model, [](const std::string&) { return false; });
  GraphOutputs g = forward_graph(vars, model, batch, model.prototypes.values());
  return {g.fusion.z.value(), g.fusion.attention.alpha.value(), g.fusion.gate.value(), g.Q.value(), g.S.value()};
}

ForwardResult forward(const CrafModel& model, std::span<const Document> docs) {
  return forward(model, encode_documents(model, docs));
}

ForwardResult forward_as_source(const CrafModel& model, const EncodedBatch& batch, int source) {
  EncodedBatch relabeled = batch;
  std::fill(relabeled.sources.begin(), relabeled.sources.end(), source);
  return forward(model, relabeled);
}

// Checkpoints.

namespace {

json tensor_json(const std::string& name, const Matrix& m) {
  json t;
  t["name"] = name;
  t["shape"] = {m.rows(), m.cols()};
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  t["data"] = std::move(data);
  return t;
}

Matrix tensor_from(const json& t) {
  const auto rows = t.at("shape").at(0).get<Eigen::Index>();
  const auto cols = t.at("shape").at(1).get<Eigen::Index>();
  const auto& data = t.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ParseError("checkpoint tensor " + t.value("name", std::string("?")) + " has wrong element count");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[static_cast<std::size_t>(i * cols + j)].get<double>();
  return m;
}

json config_json(const ModelConfig& c) {
  return {{"tfidf_dim", c.tfidf_dim},       {"semantic_dim", c.semantic_dim},
          {"proj_dim", c.proj_dim},         {"refine_layers", c.refine_layers},
          {"num_topics", c.num_topics},     {"leaky_slope", c.leaky_slope},
          {"attention", c.switches.attention}, {"gate", c.switches.gate},
          {"use_traditional", c.use_traditional}, {"use_semantic", c.use_semantic},
          {"multimodal", c.multimodal}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.tfidf_dim = j.at("tfidf_dim");
  c.semantic_dim = j.at("semantic_dim");
  c.proj_dim = j.at("proj_dim");
  c.refine_layers = j.at("refine_layers");
  c.num_topics = j.at("num_topics");
  c.leaky_slope = j.at("leaky_slope");
  c.switches.attention = j.at("attention");
  c.switches.gate = j.at("gate");
  c.use_traditional = j.at("use_traditional");
  c.use_semantic = j.at("use_semantic");
  c.multimodal = j.at("multimodal");
  return c;
}

}  // namespace

void save_checkpoint(const CrafModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = kCheckpointFormat;
  j["config"] = config_json(model.config);
  j["num_sources"] = model.num_sources;
  j["metadata_dim"] = model.metadata_dim;
  j["hyper"] = {{"input_dim", model.fusion.input_dim},
                {"proj_dim", model.fusion.proj_dim},
                {"meta_dim", model.fusion.meta_dim},
                {"layers", model.fusion.layers.size()},
                {"leaky_slope", model.fusion.leaky_slope},
                {"base_sources", model.fusion.base_sources},
                {"num_topics", model.num_topics()}};

  std::vector<double> idf(model.tfidf.idf().data(), model.tfidf.idf().data() + model.tfidf.idf().size());
  j["tfidf"] = {{"terms", model.tfidf.terms()}, {"idf", idf}};
  std::vector<std::string> vocab(model.stats.vocabulary.begin(), model.stats.vocabulary.end());
  std::sort(vocab.begin(), vocab.end());
  j["stats"] = {{"mean_length", model.stats.mean_length}, {"std_length", model.stats.std_length}, {"vocabulary", vocab}};

  if (auto* hashed = dynamic_cast<const HashedNgramEmbedder*>(model.provider.get())) {
    j["provider"] = {{"kind", "hashed-ngram"}, {"dim", hashed->dim()}};
  } else {
    j["provider"] = {{"kind", "external"}, {"dim", model.provider->dim()}};
  }

  json tensors = json::array();
  for (const auto& [name, m] : model.tensors()) tensors.push_back(tensor_json(name, *m));
  j["tensors"] = std::move(tensors);
  j["prototypes"] = {{"ema", tensor_json("prototypes.ema", model.prototypes.ema())}, {"steps", model.prototypes.steps()}};
  if (model.multimodal) {
    const auto& mm = *model.multimodal;
    j["multimodal"] = {{"raw_weights", tensor_json("multimodal.raw_weights", mm.raw_weights)},
                       {"query", tensor_json("multimodal.query", mm.query)},
                       {"key", tensor_json("multimodal.key", mm.key)},
                       {"value", tensor_json("multimodal.value", mm.value)},
                       {"visual_projection", tensor_json("multimodal.visual_projection", mm.visual_projection)},
                       {"lambda_mi", mm.lambda_mi},
                       {"temperature", mm.temperature}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
}

CrafModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", std::string()) != kCheckpointFormat)
    throw ParseError("checkpoint " + path.string() + ": unsupported format tag");
  try {
    CrafModel m;
    m.config = config_from(j.at("config"));
    m.num_sources = j.at("num_sources");
    m.metadata_dim = j.at("metadata_dim");
    const auto& idf_json = j.at("tfidf").at("idf");
    Vector idf(static_cast<Eigen::Index>(idf_json.size()));
    for (std::size_t i = 0; i < idf_json.size(); ++i) idf(static_cast<Eigen::Index>(i)) = idf_json[i].get<double>();
    m.tfidf = TfidfModel(j.at("tfidf").at("terms").get<std::vector<std::string>>(), std::move(idf));
    m.stats.mean_length = j.at("stats").at("mean_length");
    m.stats.std_length = j.at("stats").at("std_length");
    for (const auto& t : j.at("stats").at("vocabulary")) m.stats.vocabulary.insert(t.get<std::string>());

    const auto& provider = j.at("provider");
    if (provider.at("kind") != "hashed-ngram")
      throw ParseError("checkpoint uses an external embedding provider; attach it before loading");
    m.provider = std::make_shared<HashedNgramEmbedder>(provider.at("dim").get<int>());

    const auto& hyper = j.at("hyper");
    const int layers = hyper.at("layers");
    const int C = hyper.at("num_topics");
    m.fusion.input_dim = hyper.at("input_dim");
    m.fusion.proj_dim = hyper.at("proj_dim");
    m.fusion.meta_dim = hyper.at("meta_dim");
    m.fusion.leaky_slope = hyper.at("leaky_slope");
    m.fusion.base_sources = hyper.value("base_sources", 0);
    m.fusion.layers.resize(static_cast<std::size_t>(layers));
    m.topic.centroids = Matrix::Zero(C, m.fusion.proj_dim);

    std::map<std::string, Matrix> stored;
    for (const auto& t : j.at("tensors")) stored[t.at("name").get<std::string>()] = tensor_from(t);
    for (auto& ref : m.tensors()) {
      auto it = stored.find(ref.name);
      if (it == stored.end()) throw ParseError("checkpoint is missing tensor " + ref.name);
      *ref.value = std::move(it->second);
    }
    m.prototypes.restore(tensor_from(j.at("prototypes").at("ema")), j.at("prototypes").at("steps").get<std::vector<int>>());

    if (j.contains("multimodal")) {
      const auto& mm = j.at("multimodal");
      MultimodalParams p;
      p.raw_weights = tensor_from(mm.at("raw_weights"));
      p.query = tensor_from(mm.at("query"));
      p.key = tensor_from(mm.at("key"));
      p.value = tensor_from(mm.at("value"));
      p.visual_projection = tensor_from(mm.at("visual_projection"));
      p.lambda_mi = mm.at("lambda_mi");
      p.temperature = mm.at("temperature");
      m.multimodal = std::move(p);
    }
    m.fusion.check_finite();
    return m;
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace craf
