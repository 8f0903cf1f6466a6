// Acceptance run: prints one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.

#include "craf/cli.hpp"
#include "craf/evaluation.hpp"
#include "craf/experiments.hpp"
#include "craf/fusion.hpp"
#include "craf/objectives.hpp"
#include "craf/training.hpp"
#include "oracle.hpp"
#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

using namespace craf;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradTol = 1e-4;
constexpr double kGradSeconds = 30;
constexpr double kRowSumTol = 1e-12;
constexpr double kInvariantSeconds = 10;
constexpr double kLossTol = 1e-12;
constexpr double kEtaTarget = 0.5;
constexpr double kLayerDecayBound = 0.6;
constexpr double kEtaSpread = 0.1;
constexpr double kTargetAccuracy = 0.75;
constexpr double kComplexitySeconds = 30 * 60;
constexpr double kAdaptSeconds = 20 * 60;
constexpr double kSanityThreshold = 0.8;
constexpr double kSanitySeconds = 10 * 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = tiny_reference_config();
  const LossWeights& w = cfg.loss.weights;
  bool all_terms = w.topic > 0 && w.sentiment > 0 && w.consistency > 0 && w.regularization > 0;
  double worst = 0;
  std::string worst_name;
  bool every_tensor = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ReferenceProblem p = tiny_reference_problem(cfg, seed);
    const LossBreakdown l = evaluate_loss(p.model, p.batch, target_distribution(forward(p.model, p.batch).Q), cfg.loss);
    all_terms = all_terms && l.topic != 0 && l.sentiment != 0 && l.consistency != 0 && l.regularization != 0;
    const GradCheckReport r = finite_diff_check(p.model, p.batch, cfg.loss, 1e-5, seed);
    every_tensor = every_tensor && r.entries.size() == p.model.tensors().size();
    for (const auto& e : r.entries)
      if (e.max_rel_error >= worst) {
        worst = e.max_rel_error;
        worst_name = e.name;
      }
  }
  const double secs = seconds_since(t0);
  return {all_terms && every_tensor && worst < kGradTol && secs < kGradSeconds,
          "5 seeds, max rel err " + fmt("%.2e", worst) + " (" + worst_name + ") < 1e-4, " + fmt("%.1f", secs) + " s"};
}

// 2

Outcome attention_gate_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst_row = 0;
  bool gate_open = true, singleton = true, uniform = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = 1 + static_cast<int>(rng.index(8));
    const int D = 2 + static_cast<int>(rng.index(12));
    const int d = 2 + static_cast<int>(rng.index(8));
    const int meta = 1 + static_cast<int>(rng.index(6));
    FusionParams p = FusionParams::init(D, d, meta, 1, rng);
    p.attention *= 1.0 + 4.0 * rng.uniform();
    const Matrix protos = test::random_matrix(K, D, rng, 1.0 + 3.0 * rng.uniform());
    const AttentionResult a = collaborative_attention(p, protos);
    for (int k = 0; k < K; ++k) worst_row = std::max(worst_row, std::abs(a.alpha.row(k).sum() - 1.0));
    if (K == 1) singleton = singleton && a.alpha.rows() == 1 && a.alpha(0, 0) == 1.0;

    const Matrix same = protos.row(0).replicate(K, 1);
    const Matrix u = collaborative_attention(p, same).alpha;
    uniform = uniform && (u.array() - 1.0 / K).abs().maxCoeff() <= kRowSumTol;

    const Vector h = test::random_vector(d, rng, 3.0), al = test::random_vector(d, rng), m = test::random_vector(meta, rng);
    const Vector g = adaptive_gate(p, h, al, m);
    gate_open = gate_open && (g.array() > 0.0).all() && (g.array() < 1.0).all();
  }
  FusionParams p1 = FusionParams::init(6, 4, 2, 1, rng);
  singleton = singleton && collaborative_attention(p1, test::random_matrix(1, 6, rng)).alpha(0, 0) == 1.0;
  const double secs = seconds_since(t0);
  return {worst_row <= kRowSumTol && gate_open && singleton && uniform && secs < kInvariantSeconds,
          "1000 trials, max |row sum - 1| " + fmt("%.1e", worst_row) + ", gate in (0,1): " + (gate_open ? "yes" : "no") +
              ", K=1: " + (singleton ? "yes" : "no") + ", uniform rows: " + (uniform ? "yes" : "no") + ", " +
              fmt("%.2f", secs) + " s"};
}

// 3

Matrix random_rows(int n, int c, Rng& rng) {
  Matrix m(n, c);
  for (int i = 0; i < n; ++i) m.row(i) = test::random_simplex(c, rng).transpose();
  return m;
}

Outcome loss_identities() {
  Rng rng(33);
  double focal_gap = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 1 + static_cast<int>(rng.index(16));
    const Matrix probs = random_rows(n, 3, rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    double ce = 0;
    for (int i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(3));
      ce -= std::log(probs(i, labels[static_cast<std::size_t>(i)]));
    }
    ce /= n;
    focal_gap = std::max(focal_gap, std::abs(focal_loss(probs, labels, 0.0) - ce));
  }

  // KL(q || q) through the topic loss with the entropy term off.
  double self_kl = 0;
  for (int t = 0; t < 100; ++t) {
    const Matrix q = random_rows(1 + static_cast<int>(rng.index(8)), 2 + static_cast<int>(rng.index(4)), rng);
    self_kl = std::max(self_kl, std::abs(topic_loss(q, q, 0.0)));
  }

  bool js_bounds = true;
  for (int t = 0; t < 1000; ++t) {
    const int c = 2 + static_cast<int>(rng.index(6));
    const Vector p = test::random_simplex(c, rng), q = test::random_simplex(c, rng);
    const double v = js_divergence(p, q);
    js_bounds = js_bounds && v >= 0.0 && v <= std::log(2.0);
  }
  Vector e0 = Vector::Zero(3), e1 = Vector::Zero(3);
  e0(0) = 1;
  e1(1) = 1;
  const Vector any = test::random_simplex(3, rng);
  const bool js_ends = js_divergence(any, any) == 0.0 && js_divergence(e0, e1) == std::log(2.0);

  double recompose = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.index(10));
    const Matrix Z = test::random_matrix(n, 4, rng), Q = random_rows(n, 3, rng), S = random_rows(n, 3, rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = static_cast<int>(rng.index(4)) - 1;
    labels[0] = 0;
    const Matrix W = test::random_matrix(3, 4, rng);
    const Matrix* weights[] = {&W};
    LossConfig cfg;
    cfg.weights = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const LossBreakdown b = total_loss(Z, Q, target_distribution(Q), S, labels, weights, cfg);
    const double sum = cfg.weights.topic * b.topic + cfg.weights.sentiment * b.sentiment +
                       cfg.weights.consistency * b.consistency + cfg.weights.regularization * b.regularization;
    recompose = std::max(recompose, std::abs(b.total - sum));
  }
  return {focal_gap <= kLossTol && self_kl <= kLossTol && js_bounds && js_ends && recompose <= kLossTol,
          "focal(0) vs CE " + fmt("%.1e", focal_gap) + ", KL(q||q) " + fmt("%.1e", self_kl) + ", JS in [0, ln 2]: " +
              (js_bounds ? "yes" : "no") + ", JS endpoints exact: " + (js_ends ? "yes" : "no") + ", recomposition " +
              fmt("%.1e", recompose)};
}

// 4

double pair_enumeration_ari(const std::vector<int>& a, const std::vector<int>& b) {
  double both = 0, in_a = 0, in_b = 0, pairs = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const bool sa = a[i] == a[j], sb = b[i] == b[j];
      both += sa && sb;
      in_a += sa;
      in_b += sb;
      pairs += 1;
    }
  const double expected = in_a * in_b / pairs;
  const double top = 0.5 * (in_a + in_b);
  if (top == expected) return 1.0;
  return (both - expected) / (top - expected);
}

Outcome metric_oracles() {
  Rng rng(44);
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.index(7);
    std::vector<int> a(n), b(n);
    const auto ka = 1 + rng.index(4), kb = 1 + rng.index(4);
    for (auto& x : a) x = static_cast<int>(rng.index(ka));
    for (auto& x : b) x = static_cast<int>(rng.index(kb));
    mismatches += adjusted_rand_index(a, b) != pair_enumeration_ari(a, b);
  }
  const std::vector<int> truth{0, 1, 2, 0, 1, 2}, neutral(6, 1);
  // Neutral: precision 2/6, recall 1, F1 = 2 * (1/3) / (4/3) = 1/2; the others score 0.
  const double hand = (0.0 + 2.0 * (1.0 / 3.0) * 1.0 / (1.0 / 3.0 + 1.0) + 0.0) / 3.0;
  const double f1 = macro_f1(neutral, truth);
  return {mismatches == 0 && std::abs(f1 - hand) <= 1e-15,
          "500 ARI trials, " + std::to_string(mismatches) + " mismatches; macro-F1 " + fmt("%.15f", f1) + " vs 1/6"};
}

// 5

Matrix random_orthogonal(int d, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(test::random_matrix(d, d, rng));
  return qr.householderQ() * Matrix::Identity(d, d);
}

Outcome contraction() {
  const int d = 64, L = 3;
  double worst_ratio = 0, worst_spread = 0, mean_eta = 0;
  int count = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(trial, "acceptance/contraction"));
    FusionParams p = FusionParams::init(4, d, 2, L, rng);
    for (auto& layer : p.layers) {
      // Spectral norm 0.5 and a bias that keeps the ReLU inactive.
      layer.weight = kEtaTarget * random_orthogonal(d, rng);
      layer.bias.setConstant(5.0);
      layer.gain.setOnes();
      layer.shift.setZero();
      FusionParams single = p;
      single.layers = {layer};
      // Layer norm cancels the scale of W; the gain restores the target rate.
      layer.gain *= kEtaTarget / estimate_contraction(single, 64, 1.0, trial).eta[0];
      layer.shift.setConstant(1.0);
    }
    // Starts drawn from the region the estimate probes.
    Vector u = test::random_vector(d, rng), v = test::random_vector(d, rng);
    u *= std::sqrt(static_cast<double>(d)) / u.norm();
    v *= std::sqrt(static_cast<double>(d)) / v.norm();
    for (const auto& layer : p.layers) {
      const Vector fu = apply_refine_layer(layer, u), fv = apply_refine_layer(layer, v);
      worst_ratio = std::max(worst_ratio, (fu - fv).norm() / (u - v).norm());
      u = fu;
      v = fv;
    }
    std::vector<double> lo(L, 1e9), hi(L, 0);
    for (std::uint64_t s = 1; s <= 5; ++s) {
      const ContractionReport r = estimate_contraction(p, 64, 1.0, derive_seed(trial, "probe" + std::to_string(s)));
      for (int l = 0; l < L; ++l) {
        lo[static_cast<std::size_t>(l)] = std::min(lo[static_cast<std::size_t>(l)], r.eta[static_cast<std::size_t>(l)]);
        hi[static_cast<std::size_t>(l)] = std::max(hi[static_cast<std::size_t>(l)], r.eta[static_cast<std::size_t>(l)]);
        mean_eta += r.eta[static_cast<std::size_t>(l)];
        ++count;
      }
    }
    for (int l = 0; l < L; ++l)
      worst_spread = std::max(worst_spread, hi[static_cast<std::size_t>(l)] - lo[static_cast<std::size_t>(l)]);
  }
  return {worst_ratio <= kLayerDecayBound && worst_spread <= kEtaSpread,
          "100 trials x 3 layers, worst per-layer decay " + fmt("%.3f", worst_ratio) + " <= 0.6, mean eta " +
              fmt("%.3f", mean_eta / count) + ", eta spread over 5 probe seeds " + fmt("%.3f", worst_spread) + " <= 0.1"};
}

// 6

Outcome sample_complexity() {
  const auto t0 = std::chrono::steady_clock::now();
  ComplexityGrid grid;
  grid.target_accuracy = kTargetAccuracy;
  const ComplexityResult r = sample_complexity_experiment(grid);
  bool pass = true;
  std::string detail;
  for (int K : grid.sources) {
    const auto& m = r.minimal_samples.at(K);
    const auto craf = m.at("craf"), indep = m.at("independent");
    const bool ok = craf.has_value() && (!indep.has_value() || *craf <= *indep);
    pass = pass && ok;
    detail += "K=" + std::to_string(K) + ": craf m*=" + (craf ? std::to_string(*craf) : "none") +
              ", independent m*=" + (indep ? std::to_string(*indep) : "none") + "; ";
  }
  const double secs = seconds_since(t0);
  return {pass && secs < kComplexitySeconds, detail + fmt("%.0f", secs) + " s"};
}

// 7

Outcome ablation_ordering() {
  double full = 0, no_att = 0, no_gate = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Corpus corpus = synthesize_corpus(benchmark_spec(3, seed));
    TrainConfig cfg;
    cfg.seed = seed;
    full += ablation_run(corpus, cfg, {}).report.ari / 3;
    no_att += ablation_run(corpus, cfg, {Component::attention}).report.ari / 3;
    no_gate += ablation_run(corpus, cfg, {Component::gate}).report.ari / 3;
  }
  const double drop_att = full - no_att, drop_gate = full - no_gate;
  return {drop_att > 0 && drop_gate > 0 && drop_gate < drop_att,
          "3-seed mean ARI full " + fmt("%.3f", full) + ", no-attention " + fmt("%.3f", no_att) + ", no-gate " +
              fmt("%.3f", no_gate) + "; need 0 < gate drop < attention drop"};
}

// 8

Outcome few_shot() {
  const auto t0 = std::chrono::steady_clock::now();
  AdaptationSpec spec;
  const AdaptationResult r = adaptation_experiment(spec);
  bool monotone = true;
  std::string curve;
  for (std::size_t i = 0; i < spec.label_counts.size(); ++i) {
    const auto [mean, sd] = r.f1_stats("adapt", spec.label_counts[i]);
    curve += fmt("%.3f", mean) + (i + 1 < spec.label_counts.size() ? "/" : "");
    if (i > 0) {
      const auto [prev, prev_sd] = r.f1_stats("adapt", spec.label_counts[i - 1]);
      monotone = monotone && mean >= prev - std::max(sd, prev_sd);
    }
  }
  const double adapt50 = r.f1_stats("adapt", 50).first;
  const double scratch50 = r.f1_stats("scratch", spec.scratch_labels).first;
  const double secs = seconds_since(t0);
  return {monotone && adapt50 > scratch50 && secs < kAdaptSeconds,
          "adapt F1 over {0,20,50,100,200}: " + curve + " (monotone within 1 sd: " + (monotone ? "yes" : "no") +
              "); adapt@50 " + fmt("%.3f", adapt50) + " vs scratch@50 " + fmt("%.3f", scratch50) + ", " +
              fmt("%.0f", secs) + " s"};
}

// 9

std::string without_column(const std::string& csv, const std::string& column) {
  std::istringstream in(csv);
  std::string line, out;
  int drop = -1;
  bool header = true;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (header) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) drop = static_cast<int>(i);
      header = false;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (static_cast<int>(i) != drop) out += cells[i] + ",";
    out += "\n";
  }
  return out;
}

Outcome determinism() {
  test::TempDir dir("acceptance-determinism");
  test::write_file(dir / "spec.json", R"({"num_sources": 3, "num_topics": 3, "docs_per_source": 60})");
  test::write_file(dir / "new.json", R"({"num_sources": 1, "num_topics": 3, "docs_per_source": 60, "shift": 0.5})");
  test::write_file(dir / "config.json", R"({"epochs": 4, "pretrain_epochs": 4, "head_warmup_epochs": 1, "batch_size": 32,
                                           "adapt_epochs": 4, "kmeans_restarts": 2})");
  test::write_file(dir / "grid.json", R"({"sources": [2], "samples": [10], "seeds": [1], "test_per_source": 20,
    "train": {"epochs": 3, "pretrain_epochs": 3, "head_warmup_epochs": 1, "batch_size": 16, "kmeans_restarts": 1}})");
  const std::string cfg = (dir / "config.json").string();
  std::vector<std::string> differing;
  int compared = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path r = dir / run;
    const std::vector<std::vector<std::string>> commands{
        {"synth", "--spec", (dir / "spec.json").string(), "--out", (r / "corpus.jsonl").string(), "--seed", "7"},
        {"synth", "--spec", (dir / "new.json").string(), "--out", (r / "new.jsonl").string(), "--seed", "8"},
        {"train", "--corpus", (r / "corpus.jsonl").string(), "--config", cfg, "--out", (r / "train").string(), "--seed", "3"},
        {"eval", "--checkpoint", (r / "train" / "checkpoint.json").string(), "--corpus", (r / "corpus.jsonl").string(),
         "--out", (r / "eval").string()},
        {"adapt", "--checkpoint", (r / "train" / "checkpoint.json").string(), "--corpus", (r / "new.jsonl").string(),
         "--config", cfg, "--labels", "0,10", "--out", (r / "adapt").string(), "--seed", "3"},
        {"gradcheck", "--out", (r / "grad").string(), "--seed", "3"},
        {"ablate", "--corpus", (r / "corpus.jsonl").string(), "--config", cfg, "--disable", "attention", "--out",
         (r / "ablate").string(), "--seed", "3"},
        {"complexity", "--grid", (dir / "grid.json").string(), "--out", (r / "complexity").string(), "--seed", "3"},
    };
    std::ostringstream sink;
    std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
    for (auto args : commands) {
      args.insert(args.begin(), "craf");
      if (cli::dispatch(args) != 0) {
        std::cout.rdbuf(saved);
        return {false, "command '" + args[1] + "' failed"};
      }
    }
    std::cout.rdbuf(saved);
  }
  const std::vector<std::string> outputs{"corpus.jsonl",           "new.jsonl",         "train/metrics.json",
                                         "train/checkpoint.json",  "eval/metrics.json", "adapt/metrics.json",
                                         "adapt/adaptation.csv",   "grad/gradcheck.json", "ablate/metrics.json",
                                         "ablate/ablation.csv",    "complexity/metrics.json", "complexity/curves.csv"};
  for (const auto& f : outputs) {
    ++compared;
    if (test::read_file(dir / "a" / f) != test::read_file(dir / "b" / f)) differing.push_back(f);
  }
  ++compared;
  if (without_column(test::read_file(dir / "a" / "train/history.csv"), "seconds") !=
      without_column(test::read_file(dir / "b" / "train/history.csv"), "seconds"))
    differing.push_back("train/history.csv");
  std::string list;
  for (const auto& f : differing) list += " " + f;
  return {differing.empty(), std::to_string(compared) + " outputs of 8 commands compared byte for byte (history without"
                             " its timing column), " + std::to_string(differing.size()) + " differ" + list};
}

// 10

Outcome synthetic_sanity() {
  double worst_ari = 1, worst_f1 = 1, slowest = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const Corpus corpus = synthesize_corpus(separable_spec(3, seed));
    TrainConfig cfg;
    cfg.seed = seed;
    const SplitResult parts = split(corpus, cfg.split, derive_seed(cfg.seed, "split"));
    const TrainResult r = train(parts.train, parts.val, cfg);
    const BatchMetrics m = score(r.model, encode_corpus(r.model, parts.val));
    const double secs = seconds_since(t0);
    worst_ari = std::min(worst_ari, m.ari);
    worst_f1 = std::min(worst_f1, m.macro_f1);
    slowest = std::max(slowest, secs);
    detail += "seed " + std::to_string(seed) + ": ARI " + fmt("%.3f", m.ari) + " F1 " + fmt("%.3f", m.macro_f1) + " (" +
              fmt("%.0f", secs) + " s); ";
  }
  return {worst_ari > kSanityThreshold && worst_f1 > kSanityThreshold && slowest < kSanitySeconds,
          detail + "each must exceed 0.8 within 600 s"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"attention and gate invariants", attention_gate_invariants},
      {"loss identities", loss_identities},
      {"metric oracles", metric_oracles},
      {"refinement contraction", contraction},
      {"sample-complexity ordering", sample_complexity},
      {"ablation ordering", ablation_ordering},
      {"few-shot adaptation trend", few_shot},
      {"determinism", determinism},
      {"synthetic sanity", synthetic_sanity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  set_warning_handler([](const std::string&) {});

  int passed = 0, run = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    ++run;
    passed += o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << passed << "/" << run << " criteria passed" << std::endl;
  return 0;
}
