#include "craf/cli.hpp"

#include "craf/experiments.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

namespace craf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Raised for problems the user can fix on the command line.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_utc() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + " " + path + ": no such file");
}

void require_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

template <typename Fn>
void write_file(const fs::path& path, Fn&& fn) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  fn(out);
}

TrainConfig load_config(const std::string& path, std::uint64_t seed) {
  TrainConfig c;
  if (!path.empty()) {
    require_file(path, "--config");
    c = TrainConfig::load(path);
  }
  c.seed = seed;
  return c;
}

/// Manifest lifecycle: written when the run starts, finalized when it ends.
class ManifestScope {
 public:
  ManifestScope(std::string command, const fs::path& dir, std::uint64_t seed, std::vector<std::string> inputs,
                std::string hash)
      : path_(dir / "manifest.json") {
    fs::create_directories(dir);
    m_.command = std::move(command);
    m_.seed = seed;
    m_.inputs = std::move(inputs);
    m_.output_dir = dir.string();
    m_.config_hash = std::move(hash);
    m_.started = now_utc();
    m_.write(path_);
  }
  ~ManifestScope() {
    if (m_.finished.empty()) {
      m_.status = "failed";
      m_.finished = now_utc();
      try {
        m_.write(path_);
      } catch (...) {
      }
    }
  }
  void done() {
    m_.status = "ok";
    m_.finished = now_utc();
    m_.write(path_);
  }

 private:
  fs::path path_;
  RunManifest m_;
};

// synth

SynthSpec spec_from_json(const json& j) {
  SynthSpec s;
  auto list = [&](const char* key, std::vector<double>& field) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    field = v.is_array() ? v.get<std::vector<double>>() : std::vector<double>{v.get<double>()};
  };
  try {
    if (j.contains("num_sources")) s.num_sources = j.at("num_sources");
    if (j.contains("num_topics")) s.num_topics = j.at("num_topics");
    if (j.contains("docs_per_source")) s.docs_per_source = j.at("docs_per_source");
    if (j.contains("vocab_size")) s.vocab_size = j.at("vocab_size");
    list("shift", s.shift);
    list("noise", s.noise);
    list("sentiment_skew", s.sentiment_skew);
    if (j.contains("metadata_dim")) s.metadata_dim = j.at("metadata_dim");
    if (j.contains("min_length")) s.min_length = j.at("min_length");
    if (j.contains("max_length")) s.max_length = j.at("max_length");
    if (j.contains("sentiment_rate")) s.sentiment_rate = j.at("sentiment_rate");
    if (j.contains("topic_rate")) s.topic_rate = j.at("topic_rate");
    if (j.contains("start_time")) s.start_time = j.at("start_time");
    if (j.contains("seed")) s.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

void run_synth(const std::string& spec_path, const std::string& out, std::uint64_t seed, bool seed_given) {
  if (out.empty()) throw UsageError("--out is required");
  SynthSpec spec;
  if (!spec_path.empty()) {
    require_file(spec_path, "--spec");
    spec = spec_from_json(read_json(spec_path));
  }
  if (seed_given || spec_path.empty()) spec.seed = seed;
  const fs::path target(out);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_corpus(synthesize_corpus(spec), target);
}

// train / eval

void write_metrics(const fs::path& dir, const MetricReport& report) { write_json(dir / "metrics.json", report.to_json()); }

void run_train(const std::string& corpus_path, const std::string& config_path, const std::string& out, std::uint64_t seed) {
  require_file(corpus_path, "--corpus");
  require_out(out);
  const TrainConfig config = load_config(config_path, seed);
  const std::string hash = config_hash(config.to_json());
  ManifestScope manifest("train", out, seed, {corpus_path, config_path}, hash);

  const Corpus corpus = load_corpus(corpus_path);
  const SplitResult parts = split(corpus, config.split, derive_seed(seed, "split"));
  const TrainResult result = train(parts.train, parts.val, config);

  write_json(fs::path(out) / "config.json", config.to_json());
  save_checkpoint(result.model, fs::path(out) / "checkpoint.json");
  result.history.save_csv(fs::path(out) / "history.csv");
  MetricReport report = evaluate_model(result.model, parts.test.empty() ? parts.val : parts.test);
  report.dataset = fs::path(corpus_path).filename().string();
  report.seed = seed;
  report.config_hash = hash;
  json metrics = report.to_json();
  metrics["best_epoch"] = result.history.best_epoch;
  metrics["diverged"] = result.history.diverged;
  write_json(fs::path(out) / "metrics.json", metrics);
  if (result.history.diverged) warn("training diverged; the saved checkpoint is the last finite one");
  manifest.done();
}

void run_eval(const std::string& checkpoint, const std::string& corpus_path, const std::string& out, std::uint64_t seed) {
  require_file(checkpoint, "--checkpoint");
  require_file(corpus_path, "--corpus");
  require_out(out);
  const CrafModel model = load_checkpoint(checkpoint);
  const std::string hash = config_hash({{"checkpoint", fs::path(checkpoint).filename().string()}});
  ManifestScope manifest("eval", out, seed, {checkpoint, corpus_path}, hash);
  MetricReport report = evaluate_model(model, load_corpus(corpus_path));
  report.dataset = fs::path(corpus_path).filename().string();
  report.seed = seed;
  report.config_hash = hash;
  write_metrics(out, report);
  manifest.done();
}

// adapt

std::vector<int> parse_int_list(const std::string& text, const std::string& flag) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

void run_adapt(const std::string& checkpoint, const std::string& corpus_path, const std::string& config_path,
               const std::string& labels, const std::string& out, std::uint64_t seed) {
  require_file(checkpoint, "--checkpoint");
  require_file(corpus_path, "--corpus");
  require_out(out);
  const std::vector<int> counts = parse_int_list(labels, "--labels");
  const TrainConfig config = load_config(config_path, seed);
  json hashed = config.to_json();
  hashed["labels"] = counts;
  const std::string hash = config_hash(hashed);
  ManifestScope manifest("adapt", out, seed, {checkpoint, corpus_path, config_path}, hash);

  const CrafModel base = load_checkpoint(checkpoint);
  Corpus fresh = as_source(load_corpus(corpus_path), 0, 1);
  const SplitResult parts = split(fresh, {0.7, 0.0, 0.3}, derive_seed(seed, "adapt/split"));
  const Corpus test = as_source(parts.test, base.num_sources, base.num_sources + 1);

  std::optional<CrafModel> last;
  MetricReport report;
  write_file(fs::path(out) / "adaptation.csv", [&](std::ostream& csv) {
    csv << "n_labels,f1,ari\n";
    for (int n : counts) {
      CrafModel adapted = adapt(base, parts.train, n, config);
      const BatchMetrics m = score(adapted, encode_corpus(adapted, test));
      csv << n << ',' << m.macro_f1 << ',' << m.ari << '\n';
      report.ari = m.ari;
      report.macro_f1 = m.macro_f1;
      report.precision = m.precision;
      report.recall = m.recall;
      last = std::move(adapted);
    }
  });
  report.jaccard = evaluate_model(*last, test).jaccard;
  report.dataset = fs::path(corpus_path).filename().string();
  report.seed = seed;
  report.config_hash = hash;
  write_metrics(out, report);
  save_checkpoint(*last, fs::path(out) / "checkpoint.json");
  manifest.done();
}

// gradcheck

int run_gradcheck(const std::string& config_path, const std::string& out, std::uint64_t seed) {
  json merged = tiny_reference_config().to_json();
  if (!config_path.empty()) {
    require_file(config_path, "--config");
    merged.update(read_json(config_path));
  }
  merged["seed"] = seed;
  const TrainConfig config = TrainConfig::from_json(merged);
  std::optional<ManifestScope> manifest;
  if (!out.empty()) manifest.emplace("gradcheck", out, seed, std::vector<std::string>{config_path}, config_hash(merged));

  const ReferenceProblem problem = tiny_reference_problem(config, seed);
  const GradCheckReport report = finite_diff_check(problem.model, problem.batch, config.loss, 1e-5, seed);
  std::cout << std::left << std::setw(28) << "tensor" << std::setw(8) << "coords" << "max_rel_error\n";
  json rows = json::array();
  for (const auto& e : report.entries) {
    std::cout << std::left << std::setw(28) << e.name << std::setw(8) << e.coordinates << std::scientific
              << std::setprecision(3) << e.max_rel_error << std::defaultfloat << '\n';
    rows.push_back({{"tensor", e.name}, {"coordinates", e.coordinates}, {"max_rel_error", e.max_rel_error}});
  }
  const bool ok = report.passed(1e-4);
  std::cout << (ok ? "PASS" : "FAIL") << ": max relative error " << std::scientific << report.max_rel_error()
            << std::defaultfloat << " (tolerance 1e-4)\n";
  if (manifest) {
    write_json(fs::path(out) / "gradcheck.json", {{"entries", rows}, {"passed", ok}, {"tolerance", 1e-4}});
    manifest->done();
  }
  return ok ? kSuccess : kRuntime;
}

// ablate

void run_ablate(const std::string& corpus_path, const std::string& config_path, const std::string& disable, int seeds,
                const std::string& out, std::uint64_t seed) {
  require_file(corpus_path, "--corpus");
  require_out(out);
  if (seeds < 1) throw UsageError("--seeds must be at least 1");
  const TrainConfig config = load_config(config_path, seed);
  std::vector<std::set<Component>> variants{{}};
  for (auto& v : parse_disable_list(disable))
    if (std::find(variants.begin(), variants.end(), v) == variants.end()) variants.push_back(std::move(v));
  for (const auto& v : variants) (void)with_disabled(config, v);  // reject invalid combinations up front

  json hashed = config.to_json();
  hashed["disable"] = disable;
  hashed["seeds"] = seeds;
  ManifestScope manifest("ablate", out, seed, {corpus_path, config_path}, config_hash(hashed));
  const Corpus corpus = load_corpus(corpus_path);

  json summary = json::array();
  write_file(fs::path(out) / "ablation.csv", [&](std::ostream& csv) {
    csv << "variant,seed,config_hash,ari,f1\n";
    for (const auto& v : variants) {
      double ari = 0.0, f1 = 0.0;
      std::string variant_hash;
      for (int i = 0; i < seeds; ++i) {
        TrainConfig c = config;
        c.seed = seed + static_cast<std::uint64_t>(i);
        const VariantResult r = ablation_run(corpus, c, v);
        csv << r.name << ',' << c.seed << ',' << r.config_hash << ',' << r.report.ari << ',' << r.report.macro_f1 << '\n';
        ari += r.report.ari / seeds;
        f1 += r.report.macro_f1 / seeds;
      }
      variant_hash = config_hash(with_disabled(config, v).to_json());
      summary.push_back({{"variant", variant_name(v)}, {"config_hash", variant_hash}, {"ari_mean", ari},
                         {"f1_mean", f1}, {"seeds", seeds}});
    }
  });
  write_json(fs::path(out) / "metrics.json", {{"variants", summary}});
  manifest.done();
}

// complexity

void run_complexity(const std::string& grid_path, const std::string& out, std::uint64_t seed, bool seed_given) {
  require_file(grid_path, "--grid");
  require_out(out);
  const json raw = read_json(grid_path);
  ComplexityGrid grid = ComplexityGrid::from_json(raw);
  if (seed_given && !raw.contains("seeds")) grid.seeds = {seed, seed + 1, seed + 2};
  ManifestScope manifest("complexity", out, seed, {grid_path}, config_hash(grid.to_json()));
  const ComplexityResult result = sample_complexity_experiment(grid);
  write_file(fs::path(out) / "curves.csv", [&](std::ostream& csv) { result.write_csv(csv); });
  json minimal = json::object();
  for (const auto& [K, methods] : result.minimal_samples)
    for (const auto& [method, m] : methods) minimal[std::to_string(K)][method] = m ? json(*m) : json(nullptr);
  write_json(fs::path(out) / "metrics.json", {{"target_accuracy", grid.target_accuracy}, {"minimal_samples", minimal}});
  manifest.done();
}

// report

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string cell(const std::vector<std::vector<std::string>>& rows, std::size_t row, const std::string& column) {
  const auto& header = rows.at(0);
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw ParseError("missing CSV column " + column);
  return rows.at(row).at(static_cast<std::size_t>(it - header.begin()));
}

void write_attention(const fs::path& dir, const CrafModel& model) {
  const Matrix alpha = collaborative_attention(model.fusion, model.prototypes.values()).alpha;
  write_file(dir / "attention_matrix.csv", [&](std::ostream& csv) {
    csv << "source";
    for (Eigen::Index j = 0; j < alpha.cols(); ++j) csv << ",to_" << j;
    csv << '\n';
    for (Eigen::Index i = 0; i < alpha.rows(); ++i) {
      csv << i;
      for (Eigen::Index j = 0; j < alpha.cols(); ++j) csv << ',' << alpha(i, j);
      csv << '\n';
    }
  });
}

void write_timeline(const fs::path& dir, const CrafModel& model, const Corpus& corpus) {
  if (corpus.empty()) return;
  Corpus usable = corpus.like();
  for (const auto& d : corpus.documents)
    if (d.source_id < model.num_sources) usable.documents.push_back(d);
  usable.num_sources = model.num_sources;
  if (usable.empty()) return;
  const Predictions p = predict(model, encode_corpus(model, usable));
  std::int64_t start = usable.documents.front().timestamp;
  for (const auto& d : usable.documents) start = std::min(start, d.timestamp);
  std::map<std::pair<std::int64_t, int>, std::array<int, 3>> buckets;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    const auto& d = usable.documents[i];
    buckets[{(d.timestamp - start) / 86400, d.source_id}][static_cast<std::size_t>(p.sentiments[i])] += 1;
  }
  write_file(dir / "sentiment_timeline.csv", [&](std::ostream& csv) {
    csv << "day,source,count,pos,neu,neg\n";
    for (const auto& [key, counts] : buckets) {
      const double n = counts[0] + counts[1] + counts[2];
      csv << key.first << ',' << key.second << ',' << n << ',' << counts[0] / n << ',' << counts[1] / n << ','
          << counts[2] / n << '\n';
    }
  });
}

void run_report(const std::string& dir_arg) {
  if (dir_arg.empty()) throw UsageError("report needs a run directory");
  const fs::path dir(dir_arg);
  std::vector<std::string> missing;
  for (const char* f : {"manifest.json", "metrics.json"})
    if (!fs::is_regular_file(dir / f)) missing.push_back(f);
  std::string command;
  if (missing.empty()) {
    command = read_json(dir / "manifest.json").value("command", std::string());
    const std::map<std::string, std::string> needs = {
        {"train", "history.csv"}, {"ablate", "ablation.csv"}, {"adapt", "adaptation.csv"}, {"complexity", "curves.csv"}};
    if (auto it = needs.find(command); it != needs.end() && !fs::is_regular_file(dir / it->second))
      missing.push_back(it->second);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw std::runtime_error("report: missing inputs in " + dir.string() + ": " + list);
  }

  const json manifest = read_json(dir / "manifest.json");
  const json metrics = read_json(dir / "metrics.json");
  std::ostringstream md;
  md << "# Run report\n\n";
  md << "- command: " << command << "\n";
  md << "- config hash: " << manifest.value("config_hash", std::string()) << "\n";
  md << "- seed: " << manifest.value("seed", std::uint64_t{0}) << "\n";
  md << "- tool version: " << manifest.value("tool_version", std::string()) << "\n\n";

  if (command == "train") {
    const auto history = read_csv(dir / "history.csv");
    if (history.size() < 2) throw ParseError("history.csv has no epochs");
    const std::size_t last = history.size() - 1;
    md << "## Training\n\n";
    md << "- epochs: " << cell(history, last, "epoch") << "\n";
    md << "- final val ARI: " << cell(history, last, "val_ari") << "\n";
    md << "- final val F1: " << cell(history, last, "val_f1") << "\n";
    md << "- best epoch: " << metrics.value("best_epoch", 0) << "\n\n";
  }
  if (command == "ablate") {
    md << "## Ablation\n\n| variant | config hash | ARI (mean) | F1 (mean) |\n|---|---|---|---|\n";
    for (const auto& v : metrics.at("variants"))
      md << "| " << v.at("variant").get<std::string>() << " | " << v.at("config_hash").get<std::string>() << " | "
         << v.at("ari_mean").get<double>() << " | " << v.at("f1_mean").get<double>() << " |\n";
    md << "\n";
  }
  if (command == "adapt") {
    const auto curve = read_csv(dir / "adaptation.csv");
    md << "## Adaptation curve\n\n| labels | F1 | ARI |\n|---|---|---|\n";
    for (std::size_t r = 1; r < curve.size(); ++r)
      md << "| " << cell(curve, r, "n_labels") << " | " << cell(curve, r, "f1") << " | " << cell(curve, r, "ari") << " |\n";
    md << "\n";
    fs::copy_file(dir / "adaptation.csv", dir / "adaptation_curve.csv", fs::copy_options::overwrite_existing);
  }
  if (command == "complexity") {
    md << "## Minimal samples per source (target accuracy " << metrics.value("target_accuracy", 0.0) << ")\n\n";
    md << "| K | craf | independent |\n|---|---|---|\n";
    for (const auto& [K, methods] : metrics.at("minimal_samples").items()) {
      auto show = [&](const char* m) { return methods.contains(m) && !methods.at(m).is_null() ? methods.at(m).dump() : "none"; };
      md << "| " << K << " | " << show("craf") << " | " << show("independent") << " |\n";
    }
    md << "\n";
  }
  if (metrics.contains("ari") && metrics.contains("macro_f1")) {
    md << "## Held-out metrics\n\n";
    md << "- ARI: " << metrics.at("ari").get<double>() << "\n";
    md << "- macro-F1: " << metrics.at("macro_f1").get<double>() << "\n\n";
  }

  if (fs::is_regular_file(dir / "checkpoint.json")) {
    const CrafModel model = load_checkpoint(dir / "checkpoint.json");
    write_attention(dir, model);
    md << "Plot data: attention_matrix.csv";
    const auto inputs = manifest.value("inputs", std::vector<std::string>{});
    for (const auto& in : inputs)
      if (in.ends_with(".jsonl") && fs::is_regular_file(in)) {
        write_timeline(dir, model, load_corpus(in));
        md << ", sentiment_timeline.csv";
        break;
      }
    if (command == "adapt") md << ", adaptation_curve.csv";
    md << "\n";
  }
  std::ofstream out(dir / "report.md");
  if (!out) throw std::runtime_error("cannot write report.md");
  out << md.str();
}

}  // namespace

json RunManifest::to_json() const {
  return {{"command", command},       {"config_hash", config_hash}, {"seed", seed},
          {"inputs", inputs},         {"output_dir", output_dir},   {"tool_version", tool_version},
          {"started", started},       {"finished", finished.empty() ? json(nullptr) : json(finished)},
          {"status", status}};
}

void RunManifest::write(const fs::path& path) const { write_json(path, to_json()); }

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Multi-source topic and sentiment analysis with collaborative fusion", "craf"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::uint64_t seed = 0;
  std::string config, out, corpus, checkpoint, disable, grid, spec, labels = "0,20,50,100,200", run_dir;
  int seeds = 3;

  auto add_seed = [&](CLI::App* sub) { return sub->add_option("--seed", seed, "Random seed (all randomness derives from it)"); };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-source corpus");
  synth->add_option("--spec", spec, "Generator spec JSON");
  synth->add_option("--out", out, "Output corpus (.jsonl)");
  auto* synth_seed = add_seed(synth);

  auto* train_cmd = app.add_subcommand("train", "Train a model on a corpus");
  train_cmd->add_option("--corpus", corpus, "Corpus JSONL");
  train_cmd->add_option("--config", config, "Training config JSON");
  train_cmd->add_option("--out", out, "Run directory");
  add_seed(train_cmd);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a corpus");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint JSON");
  eval->add_option("--corpus", corpus, "Corpus JSONL");
  eval->add_option("--out", out, "Run directory");
  add_seed(eval);

  auto* adapt_cmd = app.add_subcommand("adapt", "Adapt a checkpoint to a new source");
  adapt_cmd->add_option("--checkpoint", checkpoint, "Checkpoint JSON");
  adapt_cmd->add_option("--corpus", corpus, "Corpus of the new source");
  adapt_cmd->add_option("--config", config, "Training config JSON (adaptation settings)");
  adapt_cmd->add_option("--labels", labels, "Comma-separated label budgets");
  adapt_cmd->add_option("--out", out, "Run directory");
  add_seed(adapt_cmd);

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare gradients with finite differences");
  gradcheck->add_option("--config", config, "Config JSON overriding the tiny reference model");
  gradcheck->add_option("--out", out, "Optional run directory");
  add_seed(gradcheck);

  auto* ablate = app.add_subcommand("ablate", "Train the full model and ablated variants");
  ablate->add_option("--corpus", corpus, "Corpus JSONL");
  ablate->add_option("--config", config, "Training config JSON");
  ablate->add_option("--disable", disable, "Comma list of attention, gate, joint, semantic, traditional ('+' combines)");
  ablate->add_option("--seeds", seeds, "Number of seeds per variant");
  ablate->add_option("--out", out, "Run directory");
  add_seed(ablate);

  auto* complexity = app.add_subcommand("complexity", "Sample-complexity learning curves");
  complexity->add_option("--grid", grid, "Grid JSON");
  complexity->add_option("--out", out, "Run directory");
  auto* complexity_seed = add_seed(complexity);

  auto* report = app.add_subcommand("report", "Summarize a run directory");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (synth->parsed()) run_synth(spec, out, seed, synth_seed->count() > 0);
    else if (train_cmd->parsed()) run_train(corpus, config, out, seed);
    else if (eval->parsed()) run_eval(checkpoint, corpus, out, seed);
    else if (adapt_cmd->parsed()) run_adapt(checkpoint, corpus, config, labels, out, seed);
    else if (gradcheck->parsed()) return run_gradcheck(config, out, seed);
    else if (ablate->parsed()) run_ablate(corpus, config, disable, seeds, out, seed);
    else if (complexity->parsed()) run_complexity(grid, out, seed, complexity_seed->count() > 0);
    else if (report->parsed()) run_report(run_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << "run 'craf --help' for usage\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kSuccess;
}

}  // namespace craf::cli
