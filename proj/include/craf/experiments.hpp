#pragma once

// Experiment protocols over the synthetic benchmark: component ablations,
// sample-complexity curves and few-shot adaptation curves.

#include "craf/evaluation.hpp"
#include "craf/training.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace craf {

/// Hex FNV-1a of the key-sorted compact JSON dump.
std::string config_hash(const nlohmann::json& config);

/// Topic ARI, sentiment scores and the cross-source Jaccard matrix on `test`.
/// Jaccard compares the clusterings obtained by presenting every test document
/// as each source in turn.
MetricReport evaluate_model(const CrafModel& model, const Corpus& test, ClusterMatching matching = ClusterMatching::greedy);

enum class Component { attention, gate, joint, semantic, traditional };

std::string component_name(Component c);
Component parse_component(const std::string& name);
/// Comma-separated names; each item may combine components with '+'.
std::vector<std::set<Component>> parse_disable_list(const std::string& list);
std::string variant_name(const std::set<Component>& disabled);

/// Config with the listed components switched off. Throws ConfigError when
/// both encoders would be disabled.
TrainConfig with_disabled(const TrainConfig& config, const std::set<Component>& disabled);

struct VariantResult {
  std::string name;
  std::set<Component> disabled;
  std::string config_hash;
  MetricReport report;
  TrainHistory history;
};

/// Trains on the config's split of `corpus` with `disabled` components off and
/// scores the test split.
VariantResult ablation_run(const Corpus& corpus, const TrainConfig& config, const std::set<Component>& disabled);

/// Synthetic corpus used by the acceptance benchmarks.
SynthSpec benchmark_spec(int num_sources, std::uint64_t seed);
/// Low-shift, noise-free variant whose topic and sentiment labels are both
/// linearly recoverable from TF-IDF, with topic the dominant structure.
SynthSpec separable_spec(int num_sources, std::uint64_t seed);

struct ComplexityGrid {
  std::vector<int> sources{2, 4, 8};
  std::vector<int> samples{10, 20, 40, 80};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int num_topics = 3;
  double shift = 0.3;
  double noise = 0.1;
  double target_accuracy = 0.75;
  int test_per_source = 100;
  TrainConfig train;

  nlohmann::json to_json() const;
  static ComplexityGrid from_json(const nlohmann::json& j);
};

struct CurveRow {
  std::string method;  // "craf" or "independent"
  int sources = 0;
  int samples = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double ari = 0.0;
  double f1 = 0.0;
};

struct ComplexityResult {
  std::vector<CurveRow> rows;
  /// Per K and method: smallest m whose seed-mean accuracy reaches the target.
  std::map<int, std::map<std::string, std::optional<int>>> minimal_samples;

  void write_csv(std::ostream& out) const;
  double mean_accuracy(const std::string& method, int sources, int samples) const;
};

/// For each (K, m, seed): CRAF on all K*m training documents and K separate
/// single-source models on m documents each, scored on held-out documents.
ComplexityResult sample_complexity_experiment(const ComplexityGrid& grid);

struct AdaptationSpec {
  int base_sources = 3;
  std::vector<int> label_counts{0, 20, 50, 100, 200};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int new_source_docs = 400;  // pool for labels plus held-out test documents
  int new_source_test = 150;
  double new_source_shift = 0.5;
  double new_source_noise = 0.1;
  int scratch_labels = 50;
  TrainConfig train;
};

struct AdaptationPoint {
  std::string method;  // "adapt" or "scratch"
  int n_labels = 0;
  std::uint64_t seed = 0;
  double f1 = 0.0;
  double ari = 0.0;
  double old_f1_before = 0.0;  // adapt rows only
  double old_f1_after = 0.0;
};

struct AdaptationResult {
  std::vector<AdaptationPoint> points;
  void write_csv(std::ostream& out) const;
  /// Mean and sample standard deviation of F1 over seeds.
  std::pair<double, double> f1_stats(const std::string& method, int n_labels) const;
};

AdaptationResult adaptation_experiment(const AdaptationSpec& spec);

}  // namespace craf
