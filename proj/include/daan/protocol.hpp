#pragma once

// Leave-one-event-out experiment runner and the results file.
//
// Results file (tab separated, one row per target event x task):
//   # daan-results v1
//   target task model n_runs acc_mean acc_std f1_mean f1_std domain_acc_mean degenerate_runs config_hash

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "daan/baseline.hpp"
#include "daan/config.hpp"
#include "daan/data.hpp"
#include "daan/metrics.hpp"
#include "daan/models.hpp"
#include "daan/train.hpp"

namespace daan {

/// Keeps the rows labelled for `task`, each reduced to that single label.
inline std::vector<Example> project_task(std::span<const Example> examples, std::size_t task) {
  std::vector<Example> out;
  for (const Example& e : examples) {
    if (!e.has_label(task)) continue;
    Example p = e;
    p.labels = {e.labels[task]};
    out.push_back(std::move(p));
  }
  return out;
}

/// Vocabulary over every source-event row of the split.
inline Vocab split_vocab(const Split& split, std::size_t min_freq) {
  return Vocab::build(split.train_domains, min_freq);
}

inline EmbeddingMatrix make_embedding(const ExperimentConfig& cfg, const Vocab& vocab, std::uint64_t seed) {
  if (!cfg.embeddings.empty()) return load_embeddings(cfg.embeddings, vocab, cfg.model.embed_dim, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  return random_embedding(vocab.size(), cfg.model.embed_dim, rng);
}

inline Model build_model(const ExperimentConfig& cfg, std::vector<std::string> tasks, std::size_t n_domains,
                         bool adversarial, const Vocab& vocab, std::uint64_t seed) {
  ModelSpec spec = cfg.model;
  spec.task_weights = resolve_task_weights(spec.task_weights, tasks.size());
  spec.tasks = std::move(tasks);
  spec.adversarial = adversarial;
  spec.n_domains = adversarial ? n_domains : 0;
  return Model::create(spec, vocab, make_embedding(cfg, vocab, seed), seed);
}

struct RunResult {
  std::vector<Metrics> tasks;  // indexed like the corpus tasks
  // Discriminator accuracy on the source rows; NaN for models without a branch.
  double domain_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Trains and evaluates one model kind on one split with one seed.
/// Single-task kinds train a separate model per task.
inline RunResult run_once(const Split& split, const std::vector<std::string>& task_names, ModelKind kind,
                          const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t m = task_names.size();
  const Vocab vocab = split_vocab(split, cfg.min_freq);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  RunResult out;
  out.tasks.resize(m);

  if (kind == ModelKind::lr) {
    const EmbeddingMatrix embedding = make_embedding(cfg, vocab, seed);
    for (std::size_t k = 0; k < m; ++k) {
      out.tasks[k] = lr_baseline(split.train_labeled, split.test, k, vocab, embedding);
    }
    return out;
  }

  if (kind == ModelKind::mt_daan) {
    Model model = build_model(cfg, task_names, split.n_domains(), true, vocab, seed);
    train(model, {split.train_labeled, split.train_domains, std::nullopt}, tc);
    out.tasks = evaluate(model, split.test).tasks;
    out.domain_accuracy = domain_accuracy(model, split.train_domains);
    return out;
  }

  const bool adversarial = kind == ModelKind::st_daan;
  double domain_sum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const auto labeled = project_task(split.train_labeled, k);
    const auto test = project_task(split.test, k);
    if (labeled.empty()) throw DataError("no source rows labelled for task '" + task_names[k] + "'");
    Model model = build_model(cfg, {task_names[k]}, split.n_domains(), adversarial, vocab, seed);
    train(model, {labeled, adversarial ? split.train_domains : std::vector<Example>{}, std::nullopt}, tc);
    out.tasks[k] = evaluate(model, test).tasks[0];
    if (adversarial) domain_sum += domain_accuracy(model, split.train_domains);
  }
  if (adversarial) out.domain_accuracy = domain_sum / static_cast<double>(m);
  return out;
}

struct ResultRow {
  std::string target;
  std::string task;
  std::string model;
  std::size_t n_runs = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double domain_acc_mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t degenerate_runs = 0;
  std::string config_hash;
};

/// Mean and sample standard deviation (0 for a single value).
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

using ProgressFn = std::function<void(const std::string& target, std::size_t run, const RunResult&)>;

/// Every event in turn is the target; runs use seeds cfg.train.seed + 0 .. n_runs - 1.
inline std::vector<ResultRow> run_protocol(const Corpus& corpus, ModelKind kind, const ExperimentConfig& cfg,
                                           const ProgressFn& progress = {}) {
  if (cfg.n_runs == 0) throw ParameterError("n_runs must be positive");
  const std::string hash = config_hash(cfg);
  std::vector<ResultRow> rows;
  for (const std::string& target : corpus.events()) {
    const Split split = leave_one_out_split(corpus, target);
    const std::size_t m = corpus.tasks.size();
    std::vector<std::vector<double>> acc(m), f1(m);
    std::vector<std::size_t> degenerate(m, 0);
    std::vector<double> dom;
    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
      const RunResult res = run_once(split, corpus.tasks, kind, cfg, cfg.train.seed + r);
      for (std::size_t k = 0; k < m; ++k) {
        acc[k].push_back(res.tasks[k].accuracy);
        f1[k].push_back(cfg.macro_f1 ? res.tasks[k].f1_macro : res.tasks[k].f1_positive);
        degenerate[k] += res.tasks[k].degenerate_f1 ? 1 : 0;
      }
      if (!std::isnan(res.domain_accuracy)) dom.push_back(res.domain_accuracy);
      if (progress) progress(target, r, res);
    }
    for (std::size_t k = 0; k < m; ++k) {
      ResultRow row;
      row.target = target;
      row.task = corpus.tasks[k];
      row.model = to_string(kind);
      row.n_runs = cfg.n_runs;
      std::tie(row.acc_mean, row.acc_std) = mean_std(acc[k]);
      std::tie(row.f1_mean, row.f1_std) = mean_std(f1[k]);
      if (!dom.empty()) row.domain_acc_mean = mean_std(dom).first;
      row.degenerate_runs = degenerate[k];
      row.config_hash = hash;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline constexpr const char* kResultsHeader = "# daan-results v1";

inline void write_results(std::ostream& out, const std::vector<ResultRow>& rows) {
  out << kResultsHeader << '\n';
  out << "target\ttask\tmodel\tn_runs\tacc_mean\tacc_std\tf1_mean\tf1_std\tdomain_acc_mean\tdegenerate_runs\tconfig_hash\n";
  using detail::shortest;
  for (const ResultRow& r : rows) {
    out << r.target << '\t' << r.task << '\t' << r.model << '\t' << r.n_runs << '\t' << shortest(r.acc_mean)
        << '\t' << shortest(r.acc_std) << '\t' << shortest(r.f1_mean) << '\t' << shortest(r.f1_std) << '\t';
    if (std::isnan(r.domain_acc_mean)) out << "nan";
    else out << shortest(r.domain_acc_mean);
    out << '\t' << r.degenerate_runs << '\t' << r.config_hash << '\n';
  }
}

inline void write_results(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write results file " + path);
  write_results(out, rows);
}

inline std::vector<ResultRow> read_results(std::istream& in, const std::string& source = "<results>") {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw DataError(source + ": not a results file");
  if (!std::getline(in, line)) throw DataError(source + ": missing column header");
  std::vector<ResultRow> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 11) throw DataError(source + ":" + std::to_string(line_no) + ": expected 11 columns");
    try {
      ResultRow r;
      r.target = f[0];
      r.task = f[1];
      r.model = f[2];
      r.n_runs = std::stoul(f[3]);
      r.acc_mean = std::stod(f[4]);
      r.acc_std = std::stod(f[5]);
      r.f1_mean = std::stod(f[6]);
      r.f1_std = std::stod(f[7]);
      r.domain_acc_mean = f[8] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[8]);
      r.degenerate_runs = std::stoul(f[9]);
      r.config_hash = f[10];
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError(source + ":" + std::to_string(line_no) + ": bad number");
    }
  }
  return rows;
}

inline std::vector<ResultRow> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results file " + path);
  return read_results(in, path);
}

}  // namespace daan
