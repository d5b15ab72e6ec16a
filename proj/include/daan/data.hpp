#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "daan/errors.hpp"
#include "daan/layers.hpp"
#include "daan/random.hpp"
#include "daan/tensor.hpp"

namespace daan {

inline constexpr std::size_t kNoDomain = std::numeric_limits<std::size_t>::max();

enum class Label : std::int8_t { absent = -1, negative = 0, positive = 1 };

struct Example {
  std::string event_id;
  std::string text;
  std::vector<std::string> tokens;
  std::vector<Label> labels;  // one per task
  std::size_t domain = kNoDomain;

  bool has_label(std::size_t task) const {
    return task < labels.size() && labels[task] != Label::absent;
  }
  bool labeled() const {
    return std::any_of(labels.begin(), labels.end(), [](Label l) { return l != Label::absent; });
  }
};

struct Corpus {
  std::vector<std::string> tasks;
  std::vector<Example> examples;
  // Records dropped because tokenization produced nothing.
  std::size_t dropped = 0;

  // Event ids in order of first appearance.
  std::vector<std::string> events() const {
    std::vector<std::string> out;
    for (const Example& e : examples) {
      if (std::find(out.begin(), out.end(), e.event_id) == out.end()) out.push_back(e.event_id);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

inline bool is_word_byte(unsigned char c) {
  return std::isalnum(c) || c == '_' || c >= 0x80;
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

inline void tokenize_chunk(std::string_view chunk, std::vector<std::string>& out) {
  if (starts_with_ci(chunk, "http://") || starts_with_ci(chunk, "https://") ||
      starts_with_ci(chunk, "www.")) {
    out.emplace_back("<url>");
    return;
  }
  std::size_t i = 0;
  const std::size_t n = chunk.size();
  auto byte = [&](std::size_t k) { return static_cast<unsigned char>(chunk[k]); };
  // Reads a word starting at i; apostrophes survive only between word bytes.
  auto read_word = [&]() {
    std::string word;
    while (i < n) {
      if (is_word_byte(byte(i))) {
        word.push_back(static_cast<char>(byte(i) < 0x80 ? std::tolower(byte(i)) : byte(i)));
        ++i;
      } else if (chunk[i] == '\'' && !word.empty() && i + 1 < n && is_word_byte(byte(i + 1))) {
        word.push_back('\'');
        ++i;
      } else {
        break;
      }
    }
    return word;
  };
  while (i < n) {
    const unsigned char c = byte(i);
    if ((c == '#' || c == '@') && i + 1 < n && is_word_byte(byte(i + 1))) {
      ++i;
      std::string word = read_word();
      out.push_back(c == '@' ? std::string("<user>") : "#" + word);
    } else if (is_word_byte(c)) {
      out.push_back(read_word());
    } else {
      ++i;
    }
  }
}

}  // namespace detail

/// Lowercases, maps URLs to "<url>" and @mentions to "<user>", keeps
/// "#tags" intact and splits on whitespace and punctuation. Punctuation is
/// dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) detail::tokenize_chunk(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus TSV: event_id <TAB> text <TAB> label per task, labels in {0,1,-}.
// An optional first line starting with '#' names the columns.

inline Label parse_label(std::string_view field, const std::string& where) {
  if (field == "0") return Label::negative;
  if (field == "1") return Label::positive;
  if (field == "-" || field.empty()) return Label::absent;
  throw LabelError(where + ": label must be 0, 1 or -, got '" + std::string(field) + "'");
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

inline Corpus parse_corpus(std::istream& in, const std::string& source = "<corpus>") {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  std::size_t task_count = 0;
  bool have_layout = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (line[0] == '#') {
      if (!have_layout && corpus.examples.empty()) {
        auto fields = split_tabs(line.substr(1));
        if (fields.size() < 2) throw DataError(where + ": header needs event and text columns");
        corpus.tasks.assign(fields.begin() + 2, fields.end());
        task_count = corpus.tasks.size();
        have_layout = true;
      }
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() < 2) throw DataError(where + ": expected at least event_id and text");
    if (!have_layout) {
      task_count = fields.size() - 2;
      for (std::size_t k = 0; k < task_count; ++k) corpus.tasks.push_back("task" + std::to_string(k + 1));
      have_layout = true;
    }
    if (fields.size() != task_count + 2) {
      throw DataError(where + ": expected " + std::to_string(task_count + 2) + " columns, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw DataError(where + ": empty event id");
    Example ex;
    ex.event_id = fields[0];
    ex.text = fields[1];
    for (std::size_t k = 0; k < task_count; ++k) ex.labels.push_back(parse_label(fields[k + 2], where));
    ex.tokens = tokenize(ex.text);
    if (ex.tokens.empty()) {
      ++corpus.dropped;
      continue;
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

inline Corpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path);
  return parse_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << "#event_id\ttext";
  for (const auto& t : corpus.tasks) out << '\t' << t;
  out << '\n';
  for (const Example& e : corpus.examples) {
    out << e.event_id << '\t' << e.text;
    for (Label l : e.labels) {
      out << '\t' << (l == Label::absent ? "-" : l == Label::positive ? "1" : "0");
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocabulary

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;

  Vocab() : tokens_{"<pad>", "<unk>"} {}

  /// Tokens with frequency >= min_freq, ordered by descending frequency and
  /// then lexicographically.
  static Vocab build(std::span<const Example> examples, std::size_t min_freq = 1) {
    std::map<std::string, std::size_t> counts;
    for (const Example& e : examples)
      for (const std::string& t : e.tokens) ++counts[t];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, c] : counts) {
      if (c >= min_freq) kept.emplace_back(tok, c);
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> order;
    order.reserve(kept.size());
    for (auto& [tok, c] : kept) order.push_back(tok);
    return from_tokens(order);
  }

  /// Assigns indices 2.. in the given order.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    for (const std::string& t : tokens) {
      if (t == "<pad>" || t == "<unk>") continue;
      if (v.index_.count(t)) throw VocabError("duplicate vocabulary token '" + t + "'");
      v.index_.emplace(t, v.tokens_.size());
      v.tokens_.push_back(t);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

  std::size_t index(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnknown : it->second;
  }

  const std::string& token(std::size_t i) const {
    if (i >= tokens_.size()) throw VocabError("vocabulary index " + std::to_string(i) + " out of range");
    return tokens_[i];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  // FNV-1a over the ordered token list.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const std::string& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ull;
      }
      h ^= 0xff;
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Pretrained embeddings: "token v1 ... v_dim" per line, optional "V dim" header.

inline EmbeddingMatrix parse_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim,
                                        std::uint64_t seed, const std::string& source = "<embeddings>") {
  Rng rng(seed);
  EmbeddingMatrix m = random_embedding(vocab.size(), dim, rng);
  Tensor& table = m.table.value;
  std::vector<bool> found(vocab.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> values;
    std::string field;
    while (fields >> field) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        throw DataError(source + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
      }
    }
    if (line_no == 1 && values.size() == 1 &&
        token.find_first_not_of("0123456789") == std::string::npos) {
      if (static_cast<std::size_t>(values[0]) != dim) {
        throw DataError(source + ":1: header declares dimension " + field + ", expected " +
                        std::to_string(dim));
      }
      continue;
    }
    if (values.size() != dim) {
      throw DataError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " values for '" + token + "', got " + std::to_string(values.size()));
    }
    const std::size_t row = vocab.index(token);
    if (row < 2 || !vocab.contains(token) || found[row]) continue;
    found[row] = true;
    for (std::size_t k = 0; k < dim; ++k) table.at(row, k) = values[k];
    m.table.frozen_rows[row] = true;
  }
  const std::size_t regular = vocab.size() - 2;
  const auto hits = static_cast<std::size_t>(std::count(found.begin(), found.end(), true));
  m.coverage = regular == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(regular);
  return m;
}

/// In-vocabulary tokens take their file vectors and are locked; the rest are
/// seeded uniform(-0.25, 0.25) and trainable. Row 0 stays zero and locked.
inline EmbeddingMatrix load_embeddings(const std::string& path, const Vocab& vocab, std::size_t dim,
                                       std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path);
  return parse_embeddings(in, vocab, dim, seed, path);
}

// ---------------------------------------------------------------------------
// Label binarization

/// low -> 0; medium, high, critical -> 1.
inline int binarize_priority(std::string_view level) {
  std::string l;
  for (char c : level) l.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (l == "low") return 0;
  if (l == "medium" || l == "high" || l == "critical") return 1;
  throw LabelError("unknown priority level '" + std::string(level) + "'");
}

/// Relevance scale 1..4: {1,2} -> 0, {3,4} -> 1.
inline int binarize_relevance(int score) {
  if (score < 1 || score > 4) throw LabelError("relevance score out of range: " + std::to_string(score));
  return score >= 3 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Leave-one-event-out split

struct Split {
  std::string target;
  std::vector<std::string> source_events;  // domain index == position
  std::vector<Example> train_labeled;
  std::vector<Example> train_domains;  // labels stripped, domain set
  std::vector<Example> test;

  std::size_t n_domains() const { return source_events.size(); }
};

inline Split leave_one_out_split(const Corpus& corpus, const std::string& target) {
  const auto events = corpus.events();
  if (std::find(events.begin(), events.end(), target) == events.end()) {
    throw SplitError("unknown target event '" + target + "'");
  }
  if (events.size() < 2) throw SplitError("corpus has no source events besides '" + target + "'");
  Split split;
  split.target = target;
  for (const auto& e : events) {
    if (e != target) split.source_events.push_back(e);
  }
  std::unordered_map<std::string, std::size_t> domain_of;
  for (std::size_t i = 0; i < split.source_events.size(); ++i) domain_of[split.source_events[i]] = i;

  for (const Example& ex : corpus.examples) {
    if (ex.event_id == target) {
      if (ex.labeled()) split.test.push_back(ex);
      continue;
    }
    Example src = ex;
    src.domain = domain_of.at(ex.event_id);
    if (src.labeled()) split.train_labeled.push_back(src);
    Example unlabeled = std::move(src);
    std::fill(unlabeled.labels.begin(), unlabeled.labels.end(), Label::absent);
    split.train_domains.push_back(std::move(unlabeled));
  }
  return split;
}

/// Seeded validation hold-out, stratified on each example's label pattern.
/// Returns {train, validation}; both keep the input order.
inline std::pair<std::vector<Example>, std::vector<Example>> validation_split(
    const std::vector<Example>& examples, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ParameterError("validation fraction must lie in [0, 1)");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    std::string key;
    for (Label l : examples[i].labels) key.push_back(static_cast<char>('1' + static_cast<int>(l)));
    groups[key].push_back(i);
  }
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(examples.size())));
  // Largest-remainder quotas so the total matches the requested fraction.
  std::vector<std::pair<std::string, std::size_t>> quota;
  std::vector<std::pair<double, std::string>> remainders;
  std::size_t assigned = 0;
  for (auto& [key, idx] : groups) {
    const double exact = fraction * static_cast<double>(idx.size());
    const auto base = static_cast<std::size_t>(std::floor(exact));
    quota.emplace_back(key, base);
    remainders.emplace_back(exact - static_cast<double>(base), key);
    assigned += base;
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::map<std::string, std::size_t> take;
  for (auto& [k, q] : quota) take[k] = q;
  for (std::size_t i = 0; assigned < target && i < remainders.size(); ++i, ++assigned) {
    ++take[remainders[i].second];
  }

  Rng rng(seed);
  std::vector<bool> in_validation(examples.size(), false);
  for (auto& [key, idx] : groups) {
    std::vector<std::size_t> order = idx;
    shuffle(order, rng);
    for (std::size_t i = 0; i < take[key] && i < order.size(); ++i) in_validation[order[i]] = true;
  }
  std::pair<std::vector<Example>, std::vector<Example>> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    (in_validation[i] ? out.second : out.first).push_back(examples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

struct Batch {
  std::size_t size = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> ids;  // [size x seq_len], right-padded with 0
  Tensor mask;                   // [size x seq_len]
  std::vector<std::size_t> lengths;
  std::vector<std::vector<double>> labels;         // [task][row]
  std::vector<std::vector<std::uint8_t>> present;  // [task][row]
  std::vector<std::size_t> domains;                // [row], kNoDomain when unknown
  std::vector<std::size_t> source;                 // row -> index in the encoded example list

  std::size_t task_count() const { return labels.size(); }

  // Longest row; steps past it are padding in every row.
  std::size_t max_length() const {
    return lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  }

  Tensor domain_onehot(std::size_t n_domains) const {
    Tensor out({size, n_domains}, 0.0);
    for (std::size_t r = 0; r < size; ++r) {
      if (domains[r] >= n_domains) throw ContractError("batch row without a valid domain index");
      out.at(r, domains[r]) = 1.0;
    }
    return out;
  }
};

/// Truncates to seq_len and right-pads with the padding index.
inline std::vector<std::size_t> encode_tokens(const std::vector<std::string>& tokens, const Vocab& vocab,
                                              std::size_t seq_len) {
  std::vector<std::size_t> ids(seq_len, Vocab::kPad);
  for (std::size_t t = 0; t < std::min(seq_len, tokens.size()); ++t) ids[t] = vocab.index(tokens[t]);
  return ids;
}

inline Batch encode_batch(const std::vector<const Example*>& rows, const Vocab& vocab,
                          std::size_t seq_len, std::size_t n_tasks) {
  if (rows.empty()) throw ContractError("cannot encode an empty batch");
  if (seq_len == 0) throw ParameterError("sequence length must be positive");
  Batch b;
  b.size = rows.size();
  b.seq_len = seq_len;
  b.ids.reserve(b.size * seq_len);
  b.mask = Tensor({b.size, seq_len}, 0.0);
  b.labels.assign(n_tasks, std::vector<double>(b.size, 0.0));
  b.present.assign(n_tasks, std::vector<std::uint8_t>(b.size, 0));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Example& ex = *rows[r];
    if (ex.tokens.empty()) throw ContractError("cannot encode an example without tokens");
    const auto ids = encode_tokens(ex.tokens, vocab, seq_len);
    b.ids.insert(b.ids.end(), ids.begin(), ids.end());
    const std::size_t len = std::min(seq_len, ex.tokens.size());
    b.lengths.push_back(len);
    for (std::size_t t = 0; t < len; ++t) b.mask.at(r, t) = 1.0;
    for (std::size_t k = 0; k < n_tasks; ++k) {
      if (ex.has_label(k)) {
        b.present[k][r] = 1;
        b.labels[k][r] = ex.labels[k] == Label::positive ? 1.0 : 0.0;
      }
    }
    b.domains.push_back(ex.domain);
    b.source.push_back(r);
  }
  return b;
}

/// Splits `examples` into batches of `batch_size`, the last one possibly
/// partial. With a non-null rng the order is shuffled first.
inline std::vector<Batch> make_batches(std::span<const Example> examples, const Vocab& vocab,
                                       std::size_t seq_len, std::size_t batch_size, Rng* rng,
                                       std::size_t n_tasks) {
  if (batch_size == 0) throw ParameterError("batch size must be positive");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (rng) shuffle(order, *rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<const Example*> rows;
    const std::size_t end = std::min(order.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) rows.push_back(&examples[order[i]]);
    Batch b = encode_batch(rows, vocab, seq_len, n_tasks);
    for (std::size_t i = start; i < end; ++i) b.source[i - start] = order[i];
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace daan
