#pragma once

// Line-oriented key=value configuration. '#' starts a comment.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <iomanip>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "daan/errors.hpp"
#include "daan/models.hpp"
#include "daan/train.hpp"

namespace daan {

struct ExperimentConfig {
  ModelSpec model;  // tasks, n_domains and adversarial are filled per run
  TrainConfig train;
  std::size_t min_freq = 1;
  std::string embeddings;  // pretrained vectors; empty means random init
  std::size_t n_runs = 10;
  bool macro_f1 = false;   // report macro F1 instead of positive-class F1
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

inline double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw DataError("config: '" + key + "' expects true or false, got '" + v + "'");
}

// Shortest text that reads back to the same double.
inline std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  using namespace detail;
  ModelSpec& m = cfg.model;
  TrainConfig& t = cfg.train;
  if (key == "seq_len") m.seq_len = to_size(key, value);
  else if (key == "embed_dim") m.embed_dim = to_size(key, value);
  else if (key == "hidden") m.hidden = to_size(key, value);
  else if (key == "attention_dim") m.attention_dim = to_size(key, value);
  else if (key == "head_hidden") m.head_hidden = to_size(key, value);
  else if (key == "domain_hidden") m.domain_hidden = to_size(key, value);
  else if (key == "lambda") m.lambda = to_real(key, value);
  else if (key == "domain_weight") m.domain_weight = to_real(key, value);
  else if (key == "dropout") m.dropout = to_real(key, value);
  else if (key == "dropout_encoder") m.dropout_encoder = to_bool(key, value);
  else if (key == "dropout_head") m.dropout_head = to_bool(key, value);
  else if (key == "task_weights") {
    m.task_weights.clear();
    std::istringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) m.task_weights.push_back(to_real(key, trim(item)));
    if (m.task_weights.empty()) throw DataError("config: task_weights is empty");
  } else if (key == "max_epochs") t.max_epochs = to_size(key, value);
  else if (key == "patience") t.patience = to_size(key, value);
  else if (key == "batch_size") t.batch_size = to_size(key, value);
  else if (key == "val_split") t.val_split = to_real(key, value);
  else if (key == "learning_rate") t.learning_rate = to_real(key, value);
  else if (key == "beta1") t.beta1 = to_real(key, value);
  else if (key == "beta2") t.beta2 = to_real(key, value);
  else if (key == "epsilon") t.epsilon = to_real(key, value);
  else if (key == "seed") t.seed = to_size(key, value);
  else if (key == "min_freq") cfg.min_freq = to_size(key, value);
  else if (key == "embeddings") cfg.embeddings = value;
  else if (key == "n_runs") cfg.n_runs = to_size(key, value);
  else if (key == "f1") {
    if (value == "positive") cfg.macro_f1 = false;
    else if (value == "macro") cfg.macro_f1 = true;
    else throw DataError("config: f1 must be 'positive' or 'macro'");
  } else {
    throw DataError("config: unknown key '" + key + "'");
  }
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& source = "<config>",
                                     ExperimentConfig cfg = {}) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected key=value");
    }
    try {
      apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig read_config(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  return parse_config(in, path, std::move(base));
}

/// Canonical key=value listing of every setting, in a fixed order.
inline std::string describe(const ExperimentConfig& cfg) {
  const ModelSpec& m = cfg.model;
  const TrainConfig& t = cfg.train;
  std::ostringstream os;
  os << "seq_len=" << m.seq_len << '\n'
     << "embed_dim=" << m.embed_dim << '\n'
     << "hidden=" << m.hidden << '\n'
     << "attention_dim=" << m.attention_dim << '\n'
     << "head_hidden=" << m.head_hidden << '\n'
     << "domain_hidden=" << m.domain_hidden << '\n'
     << "lambda=" << detail::shortest(m.lambda) << '\n';
  os << "task_weights=";
  for (std::size_t i = 0; i < m.task_weights.size(); ++i) os << (i ? "," : "") << detail::shortest(m.task_weights[i]);
  os << '\n'
     << "domain_weight=" << detail::shortest(m.domain_weight) << '\n'
     << "dropout=" << detail::shortest(m.dropout) << '\n'
     << "dropout_encoder=" << (m.dropout_encoder ? "true" : "false") << '\n'
     << "dropout_head=" << (m.dropout_head ? "true" : "false") << '\n'
     << "max_epochs=" << t.max_epochs << '\n'
     << "patience=" << t.patience << '\n'
     << "batch_size=" << t.batch_size << '\n'
     << "val_split=" << detail::shortest(t.val_split) << '\n'
     << "learning_rate=" << detail::shortest(t.learning_rate) << '\n'
     << "beta1=" << detail::shortest(t.beta1) << '\n'
     << "beta2=" << detail::shortest(t.beta2) << '\n'
     << "epsilon=" << detail::shortest(t.epsilon) << '\n'
     << "seed=" << t.seed << '\n'
     << "min_freq=" << cfg.min_freq << '\n'
     << "embeddings=" << cfg.embeddings << '\n'
     << "n_runs=" << cfg.n_runs << '\n'
     << "f1=" << (cfg.macro_f1 ? "macro" : "positive") << '\n';
  return os.str();
}

/// FNV-1a of describe(cfg), as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : describe(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Broadcasts a single task weight over `task_count` tasks.
inline std::vector<double> resolve_task_weights(const std::vector<double>& weights, std::size_t task_count) {
  if (weights.size() == task_count) return weights;
  if (weights.size() == 1) return std::vector<double>(task_count, weights[0]);
  throw ParameterError("task_weights lists " + std::to_string(weights.size()) + " values for " +
                       std::to_string(task_count) + " tasks");
}

}  // namespace daan
