// Command-line front end: synthetic data, training, evaluation, the
// leave-one-event-out protocol, attention reports and the gradient check.
//
// Exit codes: 0 success, 1 usage, 2 data or parse error, 3 numerical abort.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "daan/daan.hpp"

namespace {

using namespace daan;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

// Model-kind names accepted on the command line.
const std::vector<std::string> kKinds{"st", "st-daan", "mt-daan", "lr"};

void echo_config(const ExperimentConfig& cfg) {
  std::istringstream lines(describe(cfg));
  std::string line;
  while (std::getline(lines, line)) std::cerr << "# " << line << '\n';
  std::cerr << "# config_hash=" << config_hash(cfg) << '\n';
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  if (!path.empty()) cfg = read_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DataError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

void print_metrics(const std::string& task, const Metrics& m, bool macro) {
  std::cout << "task=" << task << " n=" << m.count << " accuracy=" << m.accuracy
            << " f1=" << (macro ? m.f1_macro : m.f1_positive) << " tp=" << m.confusion.tp
            << " fp=" << m.confusion.fp << " tn=" << m.confusion.tn << " fn=" << m.confusion.fn;
  if (m.degenerate_f1) std::cout << " degenerate_f1";
  std::cout << '\n';
  if (m.degenerate_f1) std::cerr << "warning: F1 for task " << task << " set to 0 (no positives)\n";
}

// Rows of `examples` with labels reordered to `names`; tasks missing from
// the file become absent labels.
std::vector<Example> align_tasks(const Corpus& corpus, const std::vector<std::string>& names) {
  std::vector<std::ptrdiff_t> column;
  bool any = false;
  for (const auto& n : names) {
    const auto it = std::find(corpus.tasks.begin(), corpus.tasks.end(), n);
    column.push_back(it == corpus.tasks.end() ? -1 : it - corpus.tasks.begin());
    any = any || it != corpus.tasks.end();
  }
  if (!any) throw DataError("data file has none of the model's tasks");
  std::vector<Example> out;
  for (const Example& e : corpus.examples) {
    Example a = e;
    a.labels.clear();
    for (auto c : column) a.labels.push_back(c < 0 ? Label::absent : e.labels[static_cast<std::size_t>(c)]);
    out.push_back(std::move(a));
  }
  return out;
}

int cmd_synth(const std::string& out, SynthConfig sc) {
  std::cerr << "# events=" << sc.n_events << " per_event=" << sc.n_per_event << " tasks=" << sc.n_tasks
            << " noise=" << sc.noise_rate << " label_rate=" << sc.label_rate << " cue_rate=" << sc.cue_rate
            << " seed=" << sc.seed << '\n';
  const SynthCorpus s = synth_domains(sc);
  if (out.empty() || out == "-") {
    write_corpus(std::cout, s.corpus);
  } else {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write corpus file " + out);
    write_corpus(f, s.corpus);
  }
  return 0;
}

struct TrainArgs {
  std::string kind = "mt-daan";
  std::string corpus;
  std::string target;
  std::string task;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool verbose = false;
};

int cmd_train(const TrainArgs& a) {
  const ModelKind kind = parse_model_kind(a.kind);
  ExperimentConfig cfg = load_config(a.config, a.overrides);
  cfg.train.verbose = a.verbose;
  const Corpus corpus = read_corpus(a.corpus);
  echo_config(cfg);
  std::cerr << "# model=" << to_string(kind) << " target=" << a.target << " seed=" << cfg.train.seed << '\n';
  const Split split = leave_one_out_split(corpus, a.target);
  std::cerr << "# source_events=" << split.n_domains() << " train=" << split.train_labeled.size()
            << " test=" << split.test.size() << '\n';

  if (kind == ModelKind::lr) {
    if (!a.out.empty()) throw ParameterError("the lr baseline has no model archive");
    const RunResult r = run_once(split, corpus.tasks, kind, cfg, cfg.train.seed);
    for (std::size_t k = 0; k < r.tasks.size(); ++k) print_metrics(corpus.tasks[k], r.tasks[k], cfg.macro_f1);
    return 0;
  }

  std::vector<std::string> tasks = corpus.tasks;
  std::vector<Example> labeled = split.train_labeled, test = split.test;
  if (kind != ModelKind::mt_daan) {
    std::size_t k = 0;
    if (!a.task.empty()) {
      const auto it = std::find(corpus.tasks.begin(), corpus.tasks.end(), a.task);
      if (it == corpus.tasks.end()) throw DataError("corpus has no task '" + a.task + "'");
      k = static_cast<std::size_t>(it - corpus.tasks.begin());
    }
    tasks = {corpus.tasks[k]};
    labeled = project_task(split.train_labeled, k);
    test = project_task(split.test, k);
  }
  const bool adversarial = kind != ModelKind::st;
  const Vocab vocab = split_vocab(split, cfg.min_freq);
  Model model = build_model(cfg, tasks, split.n_domains(), adversarial, vocab, cfg.train.seed);
  std::cerr << "# vocab=" << vocab.size() << " embedding_coverage=" << model.embedding.coverage << '\n';
  const History h =
      train(model, {labeled, adversarial ? split.train_domains : std::vector<Example>{}, std::nullopt}, cfg.train);
  std::cout << "epochs=" << h.epochs_run << " best_epoch=" << h.best_epoch
            << " best_val_loss=" << h.val_loss[h.best_epoch - 1] << '\n';
  const EvalResult r = evaluate(model, test);
  for (std::size_t k = 0; k < r.tasks.size(); ++k) print_metrics(tasks[k], r.tasks[k], cfg.macro_f1);
  if (adversarial) std::cout << "domain_accuracy=" << domain_accuracy(model, split.train_domains) << '\n';
  if (!a.out.empty()) {
    save_model(a.out, model);
    std::cerr << "# saved " << a.out << '\n';
  }
  return 0;
}

int cmd_eval(const std::string& archive, const std::string& data, bool macro) {
  Model model = load_model(archive);
  const Corpus corpus = read_corpus(data);
  std::cerr << "# model_tasks=" << model.spec.tasks.size() << " seq_len=" << model.spec.seq_len << '\n';
  const auto examples = align_tasks(corpus, model.spec.tasks);
  const EvalResult r = evaluate(model, examples);
  for (std::size_t k = 0; k < r.tasks.size(); ++k) print_metrics(model.spec.tasks[k], r.tasks[k], macro);
  return 0;
}

int cmd_loo(const TrainArgs& a, std::size_t runs, const std::string& results) {
  const ModelKind kind = parse_model_kind(a.kind);
  ExperimentConfig cfg = load_config(a.config, a.overrides);
  if (runs > 0) cfg.n_runs = runs;
  const Corpus corpus = read_corpus(a.corpus);
  echo_config(cfg);
  std::cerr << "# model=" << to_string(kind) << " seed=" << cfg.train.seed << " runs=" << cfg.n_runs << '\n';
  const auto rows = run_protocol(corpus, kind, cfg, [&](const std::string& target, std::size_t r, const RunResult& res) {
    if (!a.verbose) return;
    std::cerr << "target=" << target << " run=" << r + 1;
    for (std::size_t k = 0; k < res.tasks.size(); ++k) std::cerr << ' ' << corpus.tasks[k] << '=' << res.tasks[k].accuracy;
    std::cerr << '\n';
  });
  if (results.empty() || results == "-") write_results(std::cout, rows);
  else write_results(results, rows);
  return 0;
}

int cmd_explain(const std::string& archive, const std::string& input, const std::string& mode,
                const std::string& out_dir, std::size_t top) {
  Model model = load_model(archive);
  std::cerr << "# model_tasks=" << model.spec.tasks.size() << " seq_len=" << model.spec.seq_len << '\n';
  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input.empty() && input != "-") {
    file.open(input);
    if (!file) throw DataError("cannot open input file " + input);
    in = &file;
  }
  const RenderMode render = mode == "html" ? RenderMode::html : RenderMode::ansi;
  if (render == RenderMode::html && !out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::string line;
  std::size_t n = 0;
  while (std::getline(*in, line)) {
    ++n;
    const AttentionReport report = explain(model, line);
    const std::string doc = render_attention(report, render);
    if (render == RenderMode::html && !out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "explain_%04zu.html", n);
      const auto path = std::filesystem::path(out_dir) / name;
      std::ofstream f(path);
      if (!f) throw DataError("cannot write " + path.string());
      f << doc;
      std::cout << path.string() << '\n';
    } else {
      std::cout << doc;
    }
    if (top > 0) {
      for (std::size_t k = 0; k < report.tasks.size(); ++k) {
        std::cout << "top " << report.tasks[k].task << ':';
        for (const auto& t : top_tokens(report, k, top)) std::cout << ' ' << t;
        std::cout << '\n';
      }
    }
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  MicroCheckConfig cfg;
  cfg.seed = seed;
  std::cerr << "# seq_len=" << cfg.seq_len << " embed_dim=" << cfg.embed_dim << " hidden=" << cfg.hidden
            << " tasks=" << cfg.tasks << " domains=" << cfg.domains << " eps=" << cfg.eps << " seed=" << seed << '\n';
  const MicroCheckResult r = micro_grad_check(cfg);
  std::cout << "entries=" << r.check.entries << " max_relative_error=" << r.check.max_error
            << " worst=" << r.check.worst_parameter << '[' << r.check.worst_index << "] analytic="
            << r.check.worst_analytic << " numeric=" << r.check.worst_numeric << '\n';
  const bool ok = r.check.max_error < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : kExitNumerical;
}

// Each line holds two predictions (priority, irrelevant): 0/1 labels or
// probabilities, thresholded at 0.5.
int cmd_covid(const std::string& input) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input.empty() && input != "-") {
    file.open(input);
    if (!file) throw DataError("cannot open input file " + input);
    in = &file;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(*in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    std::istringstream ls(line);
    double priority = 0.0, irrelevant = 0.0;
    std::string extra;
    if (!(ls >> priority >> irrelevant) || (ls >> extra) || priority < 0.0 || priority > 1.0 ||
        irrelevant < 0.0 || irrelevant > 1.0) {
      throw DataError((in == &std::cin ? std::string("<stdin>") : input) + ":" + std::to_string(line_no) + ": expected two values in [0, 1]");
    }
    std::cout << covid_relevance(decide(priority), decide(irrelevant)) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial attention models for short-text classification"};
  app.require_subcommand(1);

  std::string synth_out;
  SynthConfig sc;
  auto* synth = app.add_subcommand("synth", "Write a synthetic multi-event corpus");
  synth->add_option("-o,--out", synth_out, "Output TSV (default stdout)");
  synth->add_option("--events", sc.n_events, "Number of events")->capture_default_str();
  synth->add_option("--per-event", sc.n_per_event, "Examples per event")->capture_default_str();
  synth->add_option("--tasks", sc.n_tasks, "Number of binary tasks")->capture_default_str();
  synth->add_option("--noise", sc.noise_rate, "Label flip probability")->capture_default_str();
  synth->add_option("--label-rate", sc.label_rate, "Probability a label is observed")->capture_default_str();
  synth->add_option("--cue-rate", sc.cue_rate, "Probability of an event-specific label cue")->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();

  TrainArgs ta;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("-m,--model", ta.kind, "Model kind")->check(CLI::IsMember(kKinds))->capture_default_str();
    cmd->add_option("-c,--corpus", ta.corpus, "Corpus TSV")->required();
    cmd->add_option("--config", ta.config, "key=value configuration file");
    cmd->add_option("--set", ta.overrides, "Override one setting (key=value), repeatable");
    cmd->add_flag("-v,--verbose", ta.verbose, "Progress on stderr");
  };
  auto* train_cmd = app.add_subcommand("train", "Train on all events except the target, test on the target");
  add_common(train_cmd);
  train_cmd->add_option("-t,--target", ta.target, "Held-out event id")->required();
  train_cmd->add_option("--task", ta.task, "Task for single-task models (default: first)");
  train_cmd->add_option("-o,--out", ta.out, "Model archive to write");

  std::string archive, data;
  bool macro = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model archive on a corpus");
  eval_cmd->add_option("-a,--archive", archive, "Model archive")->required();
  eval_cmd->add_option("-d,--data", data, "Corpus TSV")->required();
  eval_cmd->add_flag("--macro", macro, "Report macro F1");

  std::size_t runs = 0;
  std::string results;
  auto* loo_cmd = app.add_subcommand("loo", "Leave-one-event-out protocol over every event");
  add_common(loo_cmd);
  loo_cmd->add_option("-n,--runs", runs, "Runs per target (overrides n_runs)");
  loo_cmd->add_option("-o,--out", results, "Results file (default stdout)");

  std::string input, mode = "ansi", out_dir;
  std::size_t top = 0;
  auto* explain_cmd = app.add_subcommand("explain", "Attention report for each input line");
  explain_cmd->add_option("-a,--archive", archive, "Model archive")->required();
  explain_cmd->add_option("-i,--input", input, "Text lines (default stdin)");
  explain_cmd->add_option("--mode", mode, "ansi or html")->check(CLI::IsMember({"ansi", "html"}))->capture_default_str();
  explain_cmd->add_option("--out-dir", out_dir, "Write one HTML page per input here");
  explain_cmd->add_option("--top", top, "Also list the k highest-weighted tokens");

  std::uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the micro multi-task model");
  gc_cmd->add_option("--seed", gc_seed, "Seed for data and parameters")->capture_default_str();

  std::string covid_input;
  auto* covid_cmd = app.add_subcommand("covid", "Relevance = priority and not irrelevant, per input line");
  covid_cmd->add_option("-i,--input", covid_input, "Lines of 'priority irrelevant' (default stdin)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_out, sc);
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(archive, data, macro);
    if (*loo_cmd) return cmd_loo(ta, runs, results);
    if (*explain_cmd) return cmd_explain(archive, input, mode, out_dir, top);
    if (*gc_cmd) return cmd_gradcheck(gc_seed);
    if (*covid_cmd) return cmd_covid(covid_input);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ParameterError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
