#include "craf/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace craf {

using nlohmann::json;

std::string config_hash(const json& config) {
  // nlohmann::json stores objects in sorted maps, so dump() is key-order independent.
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

MetricReport evaluate_model(const CrafModel& model, const Corpus& test, ClusterMatching matching) {
  MetricReport r;
  if (test.empty()) throw ConfigError("evaluate_model: empty test corpus");
  const EncodedBatch batch = encode_corpus(model, test);
  const BatchMetrics m = score(model, batch);
  r.ari = m.ari;
  r.macro_f1 = m.macro_f1;
  r.precision = m.precision;
  r.recall = m.recall;
  std::vector<std::vector<int>> clusterings;
  for (int k = 0; k < model.num_sources; ++k) clusterings.push_back(predict(forward_as_source(model, batch, k)).topics);
  r.jaccard = cross_platform_jaccard(clusterings, matching);
  return r;
}

// Ablations.

std::string component_name(Component c) {
  switch (c) {
    case Component::attention: return "attention";
    case Component::gate: return "gate";
    case Component::joint: return "joint";
    case Component::semantic: return "semantic";
    case Component::traditional: return "traditional";
  }
  return "?";
}

Component parse_component(const std::string& name) {
  for (Component c : {Component::attention, Component::gate, Component::joint, Component::semantic, Component::traditional})
    if (component_name(c) == name) return c;
  throw ConfigError("unknown component '" + name + "' (expected attention, gate, joint, semantic or traditional)");
}

std::vector<std::set<Component>> parse_disable_list(const std::string& list) {
  std::vector<std::set<Component>> out;
  std::stringstream items(list);
  std::string item;
  while (std::getline(items, item, ',')) {
    if (item.empty()) continue;
    std::set<Component> combo;
    std::stringstream parts(item);
    std::string part;
    while (std::getline(parts, part, '+'))
      if (!part.empty()) combo.insert(parse_component(part));
    out.push_back(std::move(combo));
  }
  return out;
}

std::string variant_name(const std::set<Component>& disabled) {
  if (disabled.empty()) return "full";
  std::string name = "no-";
  bool first = true;
  for (Component c : disabled) {
    if (!first) name += "+";
    name += component_name(c);
    first = false;
  }
  return name;
}

TrainConfig with_disabled(const TrainConfig& config, const std::set<Component>& disabled) {
  TrainConfig c = config;
  for (Component comp : disabled) {
    switch (comp) {
      case Component::attention: c.model.switches.attention = false; break;
      case Component::gate: c.model.switches.gate = false; break;
      case Component::joint: c.alternate_tasks = true; break;
      case Component::semantic: c.model.use_semantic = false; break;
      case Component::traditional: c.model.use_traditional = false; break;
    }
  }
  if (!c.model.use_semantic && !c.model.use_traditional)
    throw ConfigError("cannot disable both the semantic and the traditional encoder");
  return c;
}

VariantResult ablation_run(const Corpus& corpus, const TrainConfig& config, const std::set<Component>& disabled) {
  const TrainConfig c = with_disabled(config, disabled);
  const SplitResult parts = split(corpus, c.split, derive_seed(c.seed, "split"));
  TrainResult trained = train(parts.train, parts.val, c);
  VariantResult v;
  v.name = variant_name(disabled);
  v.disabled = disabled;
  v.config_hash = config_hash(c.to_json());
  v.report = evaluate_model(trained.model, parts.test.empty() ? parts.val : parts.test);
  v.report.seed = c.seed;
  v.report.config_hash = v.config_hash;
  v.history = std::move(trained.history);
  return v;
}

SynthSpec benchmark_spec(int num_sources, std::uint64_t seed) {
  SynthSpec s;
  s.num_sources = num_sources;
  s.num_topics = 3;
  s.docs_per_source = 300;
  s.shift = {0.3};
  s.noise = {0.1};
  s.seed = seed;
  return s;
}

SynthSpec separable_spec(int num_sources, std::uint64_t seed) {
  SynthSpec s = benchmark_spec(num_sources, seed);
  s.shift = {0.1};
  s.noise = {0.0};
  s.sentiment_rate = 0.25;
  s.topic_rate = 0.6;
  return s;
}

// Sample complexity.

json ComplexityGrid::to_json() const {
  return {{"sources", sources},   {"samples", samples},
          {"seeds", seeds},       {"num_topics", num_topics},
          {"shift", shift},       {"noise", noise},
          {"target_accuracy", target_accuracy}, {"test_per_source", test_per_source},
          {"train", train.to_json()}};
}

ComplexityGrid ComplexityGrid::from_json(const json& j) {
  ComplexityGrid g;
  try {
    if (j.contains("sources")) g.sources = j.at("sources").get<std::vector<int>>();
    if (j.contains("samples")) g.samples = j.at("samples").get<std::vector<int>>();
    if (j.contains("seeds")) g.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("num_topics")) g.num_topics = j.at("num_topics");
    if (j.contains("shift")) g.shift = j.at("shift");
    if (j.contains("noise")) g.noise = j.at("noise");
    if (j.contains("target_accuracy")) g.target_accuracy = j.at("target_accuracy");
    if (j.contains("test_per_source")) g.test_per_source = j.at("test_per_source");
    if (j.contains("train")) g.train = TrainConfig::from_json(j.at("train"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("complexity grid: ") + e.what());
  }
  if (g.sources.empty() || g.samples.empty() || g.seeds.empty()) throw ConfigError("complexity grid: empty axis");
  for (int k : g.sources)
    if (k < 1) throw ConfigError("complexity grid: source counts must be positive");
  for (int m : g.samples)
    if (m < 2) throw ConfigError("complexity grid: sample counts must be at least 2");
  return g;
}

void ComplexityResult::write_csv(std::ostream& out) const {
  out << "method,K,m,seed,accuracy,ari,f1\n" << std::setprecision(17);
  for (const auto& r : rows)
    out << r.method << ',' << r.sources << ',' << r.samples << ',' << r.seed << ',' << r.accuracy << ',' << r.ari << ','
        << r.f1 << '\n';
}

double ComplexityResult::mean_accuracy(const std::string& method, int sources, int samples) const {
  double total = 0.0;
  int count = 0;
  for (const auto& r : rows)
    if (r.method == method && r.sources == sources && r.samples == samples) {
      total += r.accuracy;
      ++count;
    }
  return count ? total / count : std::nan("");
}

namespace {

struct SourceSplit {
  std::vector<Corpus> train;  // per source
  std::vector<Corpus> test;
};

SourceSplit split_per_source(const Corpus& corpus, int train_per_source) {
  SourceSplit s;
  for (int k = 0; k < corpus.num_sources; ++k) {
    s.train.push_back(corpus.like());
    s.test.push_back(corpus.like());
  }
  std::vector<int> seen(static_cast<std::size_t>(corpus.num_sources), 0);
  for (const auto& d : corpus.documents) {
    auto& n = seen[static_cast<std::size_t>(d.source_id)];
    (n < train_per_source ? s.train : s.test)[static_cast<std::size_t>(d.source_id)].documents.push_back(d);
    ++n;
  }
  return s;
}

Corpus merge(const std::vector<Corpus>& parts, const Corpus& like) {
  Corpus out = like;
  for (const auto& p : parts) out.documents.insert(out.documents.end(), p.documents.begin(), p.documents.end());
  return out;
}

TrainConfig seeded(const TrainConfig& base, std::uint64_t seed) {
  TrainConfig c = base;
  c.seed = seed;
  return c;
}

}  // namespace

ComplexityResult sample_complexity_experiment(const ComplexityGrid& grid) {
  ComplexityResult result;
  for (int K : grid.sources) {
    for (int m : grid.samples) {
      for (std::uint64_t seed : grid.seeds) {
        SynthSpec spec;
        spec.num_sources = K;
        spec.num_topics = grid.num_topics;
        spec.docs_per_source = m + grid.test_per_source;
        spec.shift = {grid.shift};
        spec.noise = {grid.noise};
        spec.seed = derive_seed(seed, "complexity/K" + std::to_string(K) + "/m" + std::to_string(m));
        const Corpus corpus = synthesize_corpus(spec);
        const SourceSplit parts = split_per_source(corpus, m);
        const Corpus train_all = merge(parts.train, corpus.like());
        const Corpus test_all = merge(parts.test, corpus.like());
        const TrainConfig cfg = seeded(grid.train, seed);

        // Joint model; the training documents double as the selection set.
        {
          const TrainResult r = train(train_all, train_all, cfg);
          const BatchMetrics s = score(r.model, encode_corpus(r.model, test_all));
          result.rows.push_back({"craf", K, m, seed, s.accuracy, s.ari, s.macro_f1});
        }

        // One single-source model per source, scored on the pooled predictions.
        {
          std::vector<int> pred, truth;
          double ari = 0.0;
          for (int k = 0; k < K; ++k) {
            const Corpus tr = as_source(parts.train[static_cast<std::size_t>(k)], 0, 1);
            const Corpus te = as_source(parts.test[static_cast<std::size_t>(k)], 0, 1);
            const TrainResult r = train(tr, tr, seeded(cfg, derive_seed(seed, "independent/" + std::to_string(k))));
            const EncodedBatch batch = encode_corpus(r.model, te);
            const Predictions p = predict(r.model, batch);
            ari += score(r.model, batch).ari / K;
            for (std::size_t i = 0; i < batch.size(); ++i)
              if (batch.sentiments[i] >= 0) {
                pred.push_back(p.sentiments[i]);
                truth.push_back(batch.sentiments[i]);
              }
          }
          result.rows.push_back({"independent", K, m, seed, accuracy(pred, truth), ari, macro_f1(pred, truth)});
        }
      }
    }
    for (const std::string method : {"craf", "independent"}) {
      std::optional<int> best;
      std::vector<int> ms = grid.samples;
      std::sort(ms.begin(), ms.end());
      for (int m : ms)
        if (result.mean_accuracy(method, K, m) >= grid.target_accuracy) {
          best = m;
          break;
        }
      result.minimal_samples[K][method] = best;
    }
  }
  return result;
}

// Few-shot adaptation.

void AdaptationResult::write_csv(std::ostream& out) const {
  out << "method,n_labels,seed,f1,ari,old_f1_before,old_f1_after\n" << std::setprecision(17);
  for (const auto& p : points)
    out << p.method << ',' << p.n_labels << ',' << p.seed << ',' << p.f1 << ',' << p.ari << ',' << p.old_f1_before << ','
        << p.old_f1_after << '\n';
}

std::pair<double, double> AdaptationResult::f1_stats(const std::string& method, int n_labels) const {
  std::vector<double> v;
  for (const auto& p : points)
    if (p.method == method && p.n_labels == n_labels) v.push_back(p.f1);
  if (v.empty()) return {std::nan(""), std::nan("")};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
  return {mean, sd};
}

AdaptationResult adaptation_experiment(const AdaptationSpec& spec) {
  AdaptationResult result;
  if (spec.new_source_test >= spec.new_source_docs) throw ConfigError("adaptation: test set must leave a label pool");
  for (std::uint64_t seed : spec.seeds) {
    // Old sources and the new one share a vocabulary layout; the new source
    // gets its own shift and noise.
    SynthSpec s = benchmark_spec(spec.base_sources + 1, derive_seed(seed, "adaptation/corpus"));
    s.docs_per_source = std::max(s.docs_per_source, spec.new_source_docs);
    s.shift.assign(static_cast<std::size_t>(spec.base_sources + 1), benchmark_spec(1, 0).shift[0]);
    s.noise.assign(static_cast<std::size_t>(spec.base_sources + 1), benchmark_spec(1, 0).noise[0]);
    s.shift.back() = spec.new_source_shift;
    s.noise.back() = spec.new_source_noise;
    const Corpus all = synthesize_corpus(s);

    Corpus old_sources = all.like();
    old_sources.num_sources = spec.base_sources;
    Corpus pool = all.like(), new_test = all.like();
    pool.num_sources = new_test.num_sources = 1;
    int new_seen = 0;
    for (const auto& d : all.documents) {
      if (d.source_id < spec.base_sources) {
        old_sources.documents.push_back(d);
      } else if (new_seen < spec.new_source_docs) {
        Document copy = d;
        copy.source_id = 0;
        (new_seen < spec.new_source_docs - spec.new_source_test ? pool : new_test).documents.push_back(copy);
        ++new_seen;
      }
    }

    const TrainConfig cfg = seeded(spec.train, seed);
    const SplitResult parts = split(old_sources, cfg.split, derive_seed(seed, "split"));
    const TrainResult base = train(parts.train, parts.val, cfg);
    const Corpus old_test = parts.test.empty() ? parts.val : parts.test;
    const double old_before = score(base.model, encode_corpus(base.model, old_test)).macro_f1;

    for (int n : spec.label_counts) {
      const CrafModel adapted = adapt(base.model, pool, n, cfg);
      const Corpus test_as_new = as_source(new_test, base.model.num_sources, adapted.num_sources);
      const BatchMetrics m = score(adapted, encode_corpus(adapted, test_as_new));
      Corpus old_for_adapted = old_test;
      old_for_adapted.num_sources = adapted.num_sources;
      const double old_after = score(adapted, encode_corpus(adapted, old_for_adapted)).macro_f1;
      result.points.push_back({"adapt", n, seed, m.macro_f1, m.ari, old_before, old_after});
    }

    // From scratch on the same kind of labeled sample the adapter would see.
    {
      TrainConfig sc = cfg;
      sc.seed = derive_seed(seed, "scratch");
      Corpus labeled = pool.like();
      for (std::size_t i = 0; i < pool.size() && static_cast<int>(labeled.size()) < spec.scratch_labels; ++i)
        labeled.documents.push_back(pool.documents[i]);
      const TrainResult r = train(labeled, labeled, sc);
      const BatchMetrics m = score(r.model, encode_corpus(r.model, new_test));
      result.points.push_back({"scratch", spec.scratch_labels, seed, m.macro_f1, m.ari, 0.0, 0.0});
    }
  }
  return result;
}

}  // namespace craf
