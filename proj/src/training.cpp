#include "craf/training.hpp"

#include "craf/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>

namespace craf {

using nlohmann::json;

// Configuration.

namespace {

std::string freeze_name(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::shared: return "shared";
    case FreezePolicy::heads: return "heads";
    case FreezePolicy::none: return "none";
  }
  return "shared";
}

FreezePolicy parse_freeze(const std::string& s) {
  if (s == "shared") return FreezePolicy::shared;
  if (s == "heads") return FreezePolicy::heads;
  if (s == "none") return FreezePolicy::none;
  throw ConfigError("unknown freeze policy '" + s + "' (expected shared, heads or none)");
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  loss.weights.validate();
  if (!(loss.focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam decays must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (model.proj_dim < 1 || model.tfidf_dim < 1 || model.semantic_dim < 1 || model.refine_layers < 0)
    throw ConfigError("model dimensions must be positive");
  if (!model.use_traditional && !model.use_semantic)
    throw ConfigError("at least one of the traditional and semantic encoders must be enabled");
  for (double r : split)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be nonnegative");
  if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  if (kmeans_restarts < 1) throw ConfigError("kmeans_restarts must be at least 1");
  if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be nonnegative");
  if (head_warmup_epochs < 0) throw ConfigError("head_warmup_epochs must be nonnegative");
  if (adapt_epochs < 0) throw ConfigError("adapt_epochs must be nonnegative");
  if (!(adapt_learning_rate >= 0.0)) throw ConfigError("adapt_learning_rate must be nonnegative");
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"lambda", {loss.weights.topic, loss.weights.sentiment, loss.weights.consistency, loss.weights.regularization}},
          {"focal_gamma", loss.focal_gamma},
          {"entropy_gamma", loss.entropy_gamma},
          {"entropy_mode", loss.entropy_mode == EntropyMode::batch_mean ? "batch_mean" : "per_row"},
          {"proj_dim", model.proj_dim},
          {"tfidf_dim", model.tfidf_dim},
          {"semantic_dim", model.semantic_dim},
          {"refine_layers", model.refine_layers},
          {"num_topics", model.num_topics},
          {"leaky_slope", model.leaky_slope},
          {"attention", model.switches.attention},
          {"gate", model.switches.gate},
          {"use_traditional", model.use_traditional},
          {"use_semantic", model.use_semantic},
          {"multimodal", model.multimodal},
          {"seed", seed},
          {"betas", {beta1, beta2}},
          {"adam_eps", adam_eps},
          {"clip_norm", clip_norm},
          {"freeze", freeze_name(freeze)},
          {"alternate_tasks", alternate_tasks},
          {"split", split},
          {"kmeans_restarts", kmeans_restarts},
          {"pretrain_epochs", pretrain_epochs},
          {"head_warmup_epochs", head_warmup_epochs},
          {"adapt_epochs", adapt_epochs},
          {"adapt_learning_rate", adapt_learning_rate}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  static const std::set<std::string> known = {
      "learning_rate", "epochs",       "batch_size",   "lambda",        "focal_gamma",  "entropy_gamma",
      "entropy_mode",  "proj_dim",     "tfidf_dim",    "semantic_dim",  "refine_layers", "num_topics",
      "leaky_slope",   "attention",    "gate",         "use_traditional", "use_semantic", "multimodal",
      "seed",          "betas",        "adam_eps",     "clip_norm",     "freeze",       "alternate_tasks",
      "split",         "kmeans_restarts", "pretrain_epochs", "head_warmup_epochs", "adapt_epochs", "adapt_learning_rate"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown training config key '" + key + "'");

  TrainConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("learning_rate", c.learning_rate);
    get("epochs", c.epochs);
    get("batch_size", c.batch_size);
    if (j.contains("lambda")) {
      const auto l = j.at("lambda").get<std::vector<double>>();
      if (l.size() != 4) throw ConfigError("lambda must have 4 entries (topic, sentiment, consistency, regularization)");
      c.loss.weights = {l[0], l[1], l[2], l[3]};
    }
    get("focal_gamma", c.loss.focal_gamma);
    get("entropy_gamma", c.loss.entropy_gamma);
    if (j.contains("entropy_mode")) {
      const auto mode = j.at("entropy_mode").get<std::string>();
      if (mode == "batch_mean") c.loss.entropy_mode = EntropyMode::batch_mean;
      else if (mode == "per_row") c.loss.entropy_mode = EntropyMode::per_row;
      else throw ConfigError("entropy_mode must be batch_mean or per_row");
    }
    get("proj_dim", c.model.proj_dim);
    get("tfidf_dim", c.model.tfidf_dim);
    get("semantic_dim", c.model.semantic_dim);
    get("refine_layers", c.model.refine_layers);
    get("num_topics", c.model.num_topics);
    get("leaky_slope", c.model.leaky_slope);
    get("attention", c.model.switches.attention);
    get("gate", c.model.switches.gate);
    get("use_traditional", c.model.use_traditional);
    get("use_semantic", c.model.use_semantic);
    get("multimodal", c.model.multimodal);
    get("seed", c.seed);
    if (j.contains("betas")) {
      const auto b = j.at("betas").get<std::vector<double>>();
      if (b.size() != 2) throw ConfigError("betas must have 2 entries");
      c.beta1 = b[0];
      c.beta2 = b[1];
    }
    get("adam_eps", c.adam_eps);
    get("clip_norm", c.clip_norm);
    if (j.contains("freeze")) c.freeze = parse_freeze(j.at("freeze").get<std::string>());
    get("alternate_tasks", c.alternate_tasks);
    get("split", c.split);
    get("kmeans_restarts", c.kmeans_restarts);
    get("pretrain_epochs", c.pretrain_epochs);
    get("head_warmup_epochs", c.head_warmup_epochs);
    get("adapt_epochs", c.adapt_epochs);
    get("adapt_learning_rate", c.adapt_learning_rate);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open training config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError("training config " + path.string() + ": " + e.what());
  }
}

// Gradients.

TrainablePredicate all_trainable() {
  return [](const std::string&) { return true; };
}

TrainablePredicate trainable_for(FreezePolicy policy) {
  switch (policy) {
    case FreezePolicy::none: return all_trainable();
    case FreezePolicy::heads:
      return [](const std::string& n) { return n.starts_with("topic.") || n.starts_with("sentiment."); };
    case FreezePolicy::shared:
      return [](const std::string& n) {
        return n.starts_with("topic.") || n.starts_with("sentiment.") || n == "fusion.gate_weight" ||
               n == "fusion.gate_bias";
      };
  }
  return all_trainable();
}

namespace {

// Central differences at eps 1e-5 on an O(1) loss carry roughly 1e-11 of
// rounding noise, so smaller gradients are compared on an absolute scale.
constexpr double kGradCheckFloor = 1e-6;

struct Graph {
  ad::Tape tape;
  ModelVars vars;
  LossVars loss;
};

void build_loss(Graph& g, const CrafModel& model, const EncodedBatch& batch, const Matrix& P, const LossConfig& config,
                const TrainablePredicate& trainable) {
  if (P.rows() != static_cast<Eigen::Index>(batch.size()) || P.cols() != model.num_topics())
    throw ConfigError("target distribution shape does not match the batch");
  g.vars = bind_model(g.tape, model, trainable);
  GraphOutputs out = forward_graph(g.vars, model, batch, model.prototypes.values());
  g.loss = total_loss_graph(out.fusion.z, out.Q, P, out.S, batch.sentiments, g.vars.penalized, config);
}

}  // namespace

BackwardResult backward(const CrafModel& model, const EncodedBatch& batch, const Matrix& P, const LossConfig& config,
                        const TrainablePredicate& trainable) {
  Graph g;
  build_loss(g, model, batch, P, config, trainable);
  BackwardResult result;
  result.loss = g.loss.values();
  g.tape.backward(g.loss.total);
  for (const auto& [name, var] : g.vars.named) {
    if (!var.requires_grad()) continue;
    const Matrix& grad = var.grad();
    Matrix full = grad.size() ? grad : Matrix::Zero(var.rows(), var.cols());
    if (!full.allFinite()) throw NumericalError("non-finite gradient in tensor " + name);
    result.grads.push_back({name, std::move(full)});
  }
  return result;
}

BackwardResult backward(const CrafModel& model, const EncodedBatch& batch, const LossConfig& config) {
  return backward(model, batch, target_distribution(forward(model, batch).Q), config);
}

LossBreakdown evaluate_loss(const CrafModel& model, const EncodedBatch& batch, const Matrix& P, const LossConfig& config) {
  Graph g;
  build_loss(g, model, batch, P, config, [](const std::string&) { return false; });
  return g.loss.values();
}

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

bool GradCheckReport::passed(double tolerance) const {
  for (const auto& e : entries)
    if (!(e.max_rel_error < tolerance)) return false;
  return true;
}

GradCheckReport finite_diff_check(const CrafModel& model, const EncodedBatch& batch, const LossConfig& config, double eps,
                                  std::uint64_t seed, int min_coords) {
  if (!(eps > 1e-8 && eps < 1e-3)) throw ConfigError("finite difference step must lie in (1e-8, 1e-3)");
  const Matrix P = target_distribution(forward(model, batch).Q);
  const BackwardResult analytic = backward(model, batch, P, config);
  std::map<std::string, const Matrix*> grads;
  for (const auto& g : analytic.grads) grads[g.name] = &g.grad;

  CrafModel probe = model;
  Rng rng(derive_seed(seed, "gradcheck"));
  GradCheckReport report;
  for (auto& ref : probe.tensors()) {
    Matrix& value = *ref.value;
    const Matrix& grad = *grads.at(ref.name);
    const auto total = static_cast<std::size_t>(value.size());
    std::vector<std::size_t> coords(total);
    for (std::size_t i = 0; i < total; ++i) coords[i] = i;
    if (total > static_cast<std::size_t>(min_coords)) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(min_coords));
    }
    GradCheckEntry entry{ref.name, 0.0, static_cast<int>(coords.size())};
    for (std::size_t flat : coords) {
      const auto r = static_cast<Eigen::Index>(flat) / value.cols();
      const auto c = static_cast<Eigen::Index>(flat) % value.cols();
      const double saved = value(r, c);
      value(r, c) = saved + eps;
      const double up = evaluate_loss(probe, batch, P, config).total;
      value(r, c) = saved - eps;
      const double down = evaluate_loss(probe, batch, P, config).total;
      value(r, c) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double exact = grad(r, c);
      const double denom = std::max({std::abs(numeric), std::abs(exact), kGradCheckFloor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(numeric - exact) / denom);
    }
    report.entries.push_back(entry);
  }
  return report;
}

TrainConfig tiny_reference_config() {
  TrainConfig c;
  c.model.tfidf_dim = 16;
  c.model.semantic_dim = 8;
  c.model.proj_dim = 4;
  c.model.num_topics = 2;
  c.model.refine_layers = 2;
  c.batch_size = 4;
  return c;
}

ReferenceProblem tiny_reference_problem(const TrainConfig& config, std::uint64_t seed) {
  SynthSpec spec;
  spec.num_sources = 2;
  spec.num_topics = config.model.num_topics > 0 ? config.model.num_topics : 2;
  spec.docs_per_source = 8;
  spec.vocab_size = 200;
  spec.min_length = 8;
  spec.max_length = 14;
  spec.shift = {0.3};
  spec.noise = {0.1};
  spec.seed = derive_seed(seed, "reference/corpus");
  const Corpus corpus = synthesize_corpus(spec);
  ReferenceProblem p{CrafModel::create(corpus, config.model, derive_seed(seed, "reference/model")), {}};
  const EncodedBatch all = encode_corpus(p.model, corpus);
  p.model.prototypes.update(all.features, all.sources);

  // Small random offsets so biases, gains and shifts are not at their symmetric init.
  Rng rng(derive_seed(seed, "reference/jitter"));
  for (auto& ref : p.model.tensors())
    for (Eigen::Index i = 0; i < ref.value->size(); ++i) ref.value->data()[i] += 0.1 * rng.normal();

  std::vector<std::size_t> rows;
  for (int k = 0; k < 2; ++k) {
    int taken = 0;
    for (std::size_t i = 0; i < all.size() && taken < 2; ++i)
      if (all.sources[i] == k) {
        rows.push_back(i);
        ++taken;
      }
  }
  p.batch = all.rows(rows);
  return p;
}

// Optimizer.

AdamOptimizer::AdamOptimizer(double learning_rate, double beta1, double beta2, double eps, double clip_norm)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), clip_(clip_norm) {}

AdamOptimizer::Moments& AdamOptimizer::moments(const std::string& name, const Matrix& like) {
  for (auto& [n, m] : state_)
    if (n == name) return m;
  state_.push_back({name, {Matrix::Zero(like.rows(), like.cols()), Matrix::Zero(like.rows(), like.cols()), 0}});
  return state_.back().second;
}

double AdamOptimizer::step(CrafModel& model, const std::vector<TensorGradient>& grads) {
  std::vector<std::pair<std::string, Matrix*>> targets;
  for (auto& ref : model.tensors()) targets.emplace_back(ref.name, ref.value);
  return step(targets, grads);
}

double AdamOptimizer::step(const std::vector<std::pair<std::string, Matrix*>>& target_list,
                           const std::vector<TensorGradient>& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  const double factor = norm > clip_ ? clip_ / norm : 1.0;

  std::map<std::string, Matrix*> targets(target_list.begin(), target_list.end());
  for (const auto& g : grads) {
    auto it = targets.find(g.name);
    if (it == targets.end()) throw ConfigError("optimizer: unknown tensor " + g.name);
    Matrix& param = *it->second;
    Moments& s = moments(g.name, param);
    const Matrix grad = g.grad * factor;
    ++s.t;
    s.m = beta1_ * s.m + (1.0 - beta1_) * grad;
    s.v = beta2_ * s.v + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1_, s.t);
    const double c2 = 1.0 - std::pow(beta2_, s.t);
    const Matrix update = ((s.m / c1).array() / ((s.v / c2).array().sqrt() + eps_)).matrix();
    param -= lr_ * update;
  }
  return norm;
}

// Clustering initialization.

Matrix kmeans(const Matrix& points, int k, int restarts, std::uint64_t seed, int max_iter) {
  const auto n = points.rows();
  if (k < 1 || n < k) throw ConfigError("kmeans: need at least k points");
  Rng rng(seed);
  Matrix best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (int run = 0; run < restarts; ++run) {
    Matrix centers(k, points.cols());
    centers.row(0) = points.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n))));
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (points.row(i) - centers.row(0)).squaredNorm();
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : d2) total += v;
      const auto pick = total > 0.0 ? static_cast<Eigen::Index>(rng.categorical(d2))
                                    : static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(n)));
      centers.row(c) = points.row(pick);
      for (Eigen::Index i = 0; i < n; ++i)
        d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - centers.row(c)).squaredNorm());
    }

    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
      bool changed = false;
      inertia = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double d = (points.row(i) - centers.row(c)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            arg = c;
          }
        }
        inertia += best_d;
        if (assign[static_cast<std::size_t>(i)] != arg) {
          assign[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      if (!changed) break;
      Matrix sums = Matrix::Zero(k, points.cols());
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      }
      for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    }
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best = centers;
    }
  }
  return best;
}

// History.

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_topic,train_sentiment,train_consistency,train_regularization,train_total,"
         "val_topic,val_sentiment,val_consistency,val_regularization,val_total,val_ari,val_f1,seconds\n";
  out << std::setprecision(17);
  for (const auto& e : epochs) {
    out << e.epoch << ',' << e.train.topic << ',' << e.train.sentiment << ',' << e.train.consistency << ','
        << e.train.regularization << ',' << e.train.total << ',' << e.val.topic << ',' << e.val.sentiment << ','
        << e.val.consistency << ',' << e.val.regularization << ',' << e.val.total << ',' << e.val_ari << ','
        << e.val_f1 << ',' << e.seconds << '\n';
  }
}

void TrainHistory::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(out);
}

// Prediction and scoring.

Predictions predict(const ForwardResult& result) {
  Predictions p;
  for (Eigen::Index i = 0; i < result.Q.rows(); ++i) {
    Eigen::Index t = 0, s = 0;
    result.Q.row(i).maxCoeff(&t);
    result.S.row(i).maxCoeff(&s);
    p.topics.push_back(static_cast<int>(t));
    p.sentiments.push_back(static_cast<int>(s));
  }
  return p;
}

Predictions predict(const CrafModel& model, const EncodedBatch& batch) { return predict(forward(model, batch)); }

namespace {

BatchMetrics score_predictions(const Predictions& p, const EncodedBatch& batch) {
  BatchMetrics m;
  std::vector<int> tp, tt, sp, st;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch.topics[i] >= 0) {
      tp.push_back(p.topics[i]);
      tt.push_back(batch.topics[i]);
    }
    if (batch.sentiments[i] >= 0) {
      sp.push_back(p.sentiments[i]);
      st.push_back(batch.sentiments[i]);
    }
  }
  if (tp.size() >= 2) m.ari = adjusted_rand_index(tp, tt);
  if (!sp.empty()) {
    const F1Report f1 = macro_f1_report(sp, st);
    m.macro_f1 = f1.macro_f1;
    m.precision = f1.precision;
    m.recall = f1.recall;
    m.accuracy = accuracy(sp, st);
  }
  return m;
}

}  // namespace

BatchMetrics score(const CrafModel& model, const EncodedBatch& batch) {
  return score_predictions(predict(model, batch), batch);
}

// Training loop.

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> order, int batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < order.size(); start += b)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + b)));
  // A trailing singleton cannot form pairs; fold it into the previous batch.
  if (batches.size() > 1 && batches.back().size() < 2) {
    batches[batches.size() - 2].insert(batches[batches.size() - 2].end(), batches.back().begin(), batches.back().end());
    batches.pop_back();
  }
  return batches;
}

Matrix gather(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.topic) && std::isfinite(b.sentiment) && std::isfinite(b.consistency) &&
         std::isfinite(b.regularization) && std::isfinite(b.total);
}

bool params_finite(const CrafModel& model) {
  for (const auto& [_, m] : model.tensors())
    if (!m->allFinite()) return false;
  return true;
}

void accumulate(LossBreakdown& into, const LossBreakdown& b, double w) {
  into.topic += w * b.topic;
  into.sentiment += w * b.sentiment;
  into.consistency += w * b.consistency;
  into.regularization += w * b.regularization;
  into.total += w * b.total;
  into.weights = b.weights;
}

constexpr double kDecoderPenalty = 1e-2;

/// Reconstruction step for pretraining: a linear decoder maps z back to the
/// traditional block (the whole encoding when that encoder is off). Returns the
/// penalized reconstruction loss.
double pretrain_step(CrafModel& model, Matrix& decoder, Matrix& decoder_bias, const EncodedBatch& batch,
                     AdamOptimizer& adam) {
  ad::Tape tape;
  const auto fusion_only = [](const std::string& n) { return n.starts_with("fusion."); };
  ModelVars vars = bind_model(tape, model, fusion_only);
  ad::Var dec = tape.parameter(decoder);
  ad::Var dec_bias = tape.parameter(decoder_bias);
  GraphOutputs out = forward_graph(vars, model, batch, model.prototypes.values());
  ad::Var recon = ad::add_row(ad::matmul_nt(out.fusion.z, dec), dec_bias);
  // The sparse block carries the topic structure; the hashed semantic block
  // mostly adds variance that k-means would otherwise latch onto.
  Matrix target = batch.features;
  if (model.config.use_traditional) target.rightCols(target.cols() - model.tfidf.dim()).setZero();
  ad::Var loss = ad::scale(ad::sum(ad::square(ad::sub(recon, tape.constant(target)))),
                           1.0 / static_cast<double>(batch.size()));
  // Without a penalty the decoder grows and z shrinks to a near-constant vector.
  loss = ad::add(loss, ad::scale(ad::sum(ad::square(dec)), kDecoderPenalty));
  tape.backward(loss);
  std::vector<TensorGradient> grads;
  for (const auto& [name, var] : vars.named)
    if (var.requires_grad()) grads.push_back({name, var.grad().size() ? var.grad() : Matrix::Zero(var.rows(), var.cols())});
  grads.push_back({"decoder.weight", dec.grad()});
  grads.push_back({"decoder.bias", dec_bias.grad()});
  for (const auto& g : grads)
    if (!g.grad.allFinite()) throw NumericalError("non-finite gradient in tensor " + g.name);
  std::vector<std::pair<std::string, Matrix*>> targets;
  for (auto& ref : model.tensors())
    if (fusion_only(ref.name)) targets.emplace_back(ref.name, ref.value);
  targets.emplace_back("decoder.weight", &decoder);
  targets.emplace_back("decoder.bias", &decoder_bias);
  adam.step(targets, grads);
  return loss.scalar();
}

}  // namespace

void warm_start(CrafModel& model, const EncodedBatch& data, const TrainConfig& config) {
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (const auto& idx : make_batches(order, config.batch_size)) {
    const EncodedBatch sub = data.rows(idx);
    model.prototypes.update(sub.features, sub.sources, false);
  }
  for (int k = 0; k < model.prototypes.num_sources(); ++k)
    if (model.prototypes.steps()[static_cast<std::size_t>(k)] == 0)
      warn("prototypes: source " + std::to_string(k) + " has no training documents; using a zero prototype");
  if (config.pretrain_epochs > 0) {
    Rng rng(derive_seed(config.seed, "pretrain"));
    Matrix decoder = glorot_uniform(static_cast<int>(data.features.cols()), model.config.proj_dim, rng);
    Matrix decoder_bias = Matrix::Zero(1, data.features.cols());
    AdamOptimizer adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.clip_norm);
    const FusionParams initial = model.fusion;
    try {
      for (int epoch = 0; epoch < config.pretrain_epochs; ++epoch) {
        rng.shuffle(order);
        for (const auto& idx : make_batches(order, config.batch_size))
          pretrain_step(model, decoder, decoder_bias, data.rows(idx), adam);
      }
      if (!params_finite(model)) throw NumericalError("non-finite parameter after pretraining");
      forward(model, data);
    } catch (const NumericalError& e) {
      warn(std::string("pretraining diverged, keeping initial fusion weights: ") + e.what());
      model.fusion = initial;
    }
  }
  const Matrix z = forward(model, data).z;
  if (z.rows() >= model.num_topics())
    model.topic.centroids = kmeans(z, model.num_topics(), config.kmeans_restarts, derive_seed(config.seed, "kmeans"));
}

TrainResult train(const Corpus& train_set, const Corpus& val_set, const TrainConfig& config,
                  std::shared_ptr<const EmbeddingProvider> provider) {
  config.validate();
  if (train_set.size() < 2) throw ConfigError("training needs at least 2 documents");
  CrafModel model = CrafModel::create(train_set, config.model, config.seed, std::move(provider));
  const EncodedBatch data = encode_corpus(model, train_set);
  const EncodedBatch val = encode_corpus(model, val_set);
  warm_start(model, data, config);

  AdamOptimizer adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.clip_norm);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  const TrainablePredicate heads_only = trainable_for(FreezePolicy::heads);
  TrainResult result{model, {}};
  CrafModel last_finite = model;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_best = false;

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    EpochRecord record;
    record.epoch = epoch;
    bool diverged = false;
    std::size_t step = 0;
    Matrix P_all;
    try {
      P_all = target_distribution(forward(model, data).Q);
    } catch (const NumericalError& e) {
      warn("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      diverged = true;
    }
    for (const auto& idx : make_batches(order, config.batch_size)) {
      if (diverged) break;
      const EncodedBatch sub = data.rows(idx);
      model.prototypes.update(sub.features, sub.sources);
      LossConfig loss = config.loss;
      if (config.alternate_tasks) {
        loss.weights.consistency = 0.0;
        if (step % 2 == 0) loss.weights.sentiment = 0.0;
        else loss.weights.topic = 0.0;
      }
      ++step;
      try {
        const BackwardResult br = epoch <= config.head_warmup_epochs
                                      ? backward(model, sub, gather(P_all, idx), loss, heads_only)
                                      : backward(model, sub, gather(P_all, idx), loss);
        if (!finite(br.loss)) throw NumericalError("non-finite loss");
        accumulate(record.train, br.loss, static_cast<double>(idx.size()) / static_cast<double>(data.size()));
        adam.step(model, br.grads);
        if (!params_finite(model)) throw NumericalError("non-finite parameter after update");
      } catch (const NumericalError& e) {
        warn("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        diverged = true;
        break;
      }
    }
    if (diverged) {
      result.history.diverged = true;
      if (!have_best) result.model = last_finite;
      return result;
    }

    if (val.size() >= 2) {
      try {
        const ForwardResult fr = forward(model, val);
        const Matrix P_val = target_distribution(fr.Q);
        record.val = evaluate_loss(model, val, P_val, config.loss);
        const BatchMetrics m = score_predictions(predict(fr), val);
        record.val_ari = m.ari;
        record.val_f1 = m.macro_f1;
      } catch (const NumericalError& e) {
        warn("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
        result.history.diverged = true;
        if (!have_best) result.model = last_finite;
        return result;
      }
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(record);
    last_finite = model;

    const double s = record.val_ari + record.val_f1;
    if (!have_best || s > best_score) {
      best_score = s;
      have_best = true;
      result.model = model;
      result.history.best_epoch = epoch;
    }
  }
  return result;
}

TrainResult train(const Corpus& corpus, const TrainConfig& config, std::shared_ptr<const EmbeddingProvider> provider) {
  config.validate();
  SplitResult parts = split(corpus, config.split, derive_seed(config.seed, "split"));
  return train(parts.train, parts.val, config, std::move(provider));
}

// Adaptation.

Corpus as_source(const Corpus& corpus, int source, int num_sources) {
  Corpus out = corpus;
  out.num_sources = num_sources;
  for (auto& d : out.documents) d.source_id = source;
  return out;
}

namespace {

std::vector<std::size_t> stratified_sample(const Corpus& corpus, int n, std::uint64_t seed) {
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus.documents[i].sentiment) labeled.push_back(i);
  if (static_cast<std::size_t>(n) > labeled.size())
    throw ConfigError("adapt: requested " + std::to_string(n) + " labels but only " + std::to_string(labeled.size()) +
                      " labeled documents are available");
  Rng rng(seed);
  rng.shuffle(labeled);
  if (n < corpus.num_topics) {
    warn("adapt: n_labels " + std::to_string(n) + " is below the topic count; sampling without stratification");
    labeled.resize(static_cast<std::size_t>(n));
    return labeled;
  }
  // Round-robin over topics in shuffled order; exhausted strata are skipped.
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i : labeled) strata[corpus.documents[i].topic.value_or(-1)].push_back(i);
  std::vector<std::size_t> picked;
  std::map<int, std::size_t> cursor;
  while (static_cast<int>(picked.size()) < n) {
    for (auto& [topic, members] : strata) {
      if (static_cast<int>(picked.size()) >= n) break;
      auto& c = cursor[topic];
      if (c < members.size()) picked.push_back(members[c++]);
    }
  }
  return picked;
}

}  // namespace

CrafModel adapt(const CrafModel& base, const Corpus& new_source, int n_labels, const TrainConfig& config) {
  config.validate();
  if (n_labels < 0) throw ConfigError("adapt: n_labels must be nonnegative");
  CrafModel model = base;
  const int K = base.num_sources;
  if (model.fusion.base_sources == 0) model.fusion.base_sources = K;
  model.num_sources = K + 1;
  model.prototypes.add_source();

  const Corpus docs = as_source(new_source, K, K + 1);
  if (docs.empty()) return model;
  const EncodedBatch all = encode_corpus(model, docs);
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (const auto& idx : make_batches(order, config.batch_size)) {
    const EncodedBatch sub = all.rows(idx);
    model.prototypes.update(sub.features, sub.sources);
  }
  if (n_labels == 0 || config.adapt_epochs == 0) return model;

  const auto picked = stratified_sample(docs, n_labels, derive_seed(config.seed, "adapt/sample"));
  const EncodedBatch labeled = all.rows(picked);
  const TrainablePredicate trainable = trainable_for(config.freeze);
  AdamOptimizer adam(config.adapt_learning_rate, config.beta1, config.beta2, config.adam_eps, config.clip_norm);
  Rng rng(derive_seed(config.seed, "adapt/shuffle"));
  std::vector<std::size_t> rows(labeled.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;

  for (int epoch = 0; epoch < config.adapt_epochs; ++epoch) {
    const Matrix P_all = target_distribution(forward(model, labeled).Q);
    rng.shuffle(rows);
    for (const auto& idx : make_batches(rows, config.batch_size)) {
      const EncodedBatch sub = labeled.rows(idx);
      const BackwardResult br = backward(model, sub, gather(P_all, idx), config.loss, trainable);
      if (!finite(br.loss)) throw NumericalError("adapt: non-finite loss");
      adam.step(model, br.grads);
    }
  }
  return model;
}

}  // namespace craf
