#pragma once

// Text model archive. Doubles are written as C99 hex floats so a save/load
// cycle reproduces every bit.
//
//   daan-model 1
//   spec <key> <value...>
//   vocab_hash <16 hex digits>
//   vocab <count>
//   <one token per line>
//   coverage <hexfloat>
//   tensor <name> <rank> <dims...>
//   <hexfloat values separated by spaces>
//   frozen <name> <bitstring>          (only for tensors with frozen rows)
//   end

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "daan/models.hpp"

namespace daan {

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("model archive: bad number '" + s + "'");
  return v;
}

inline std::string hex_u64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline void save_model(std::ostream& out, Model& model) {
  const ModelSpec& s = model.spec;
  out << "daan-model 1\n";
  out << "spec seq_len " << s.seq_len << '\n';
  out << "spec embed_dim " << s.embed_dim << '\n';
  out << "spec hidden " << s.hidden << '\n';
  out << "spec attention_dim " << s.attention_dim << '\n';
  out << "spec head_hidden " << s.head_hidden << '\n';
  out << "spec domain_hidden " << s.domain_hidden << '\n';
  out << "spec tasks " << s.tasks.size();
  for (const auto& t : s.tasks) out << ' ' << t;
  out << '\n';
  out << "spec n_domains " << s.n_domains << '\n';
  out << "spec adversarial " << (s.adversarial ? 1 : 0) << '\n';
  out << "spec lambda " << hex_double(s.lambda) << '\n';
  out << "spec task_weights " << s.task_weights.size();
  for (double w : s.task_weights) out << ' ' << hex_double(w);
  out << '\n';
  out << "spec domain_weight " << hex_double(s.domain_weight) << '\n';
  out << "spec dropout " << hex_double(s.dropout) << '\n';
  out << "spec dropout_encoder " << (s.dropout_encoder ? 1 : 0) << '\n';
  out << "spec dropout_head " << (s.dropout_head ? 1 : 0) << '\n';
  out << "vocab_hash " << hex_u64(model.vocab.hash()) << '\n';
  out << "vocab " << model.vocab.size() << '\n';
  for (const auto& t : model.vocab.tokens()) out << t << '\n';
  out << "coverage " << hex_double(model.embedding.coverage) << '\n';
  for (Parameter* p : model.parameters()) {
    out << "tensor " << p->name << ' ' << p->value.rank();
    for (std::size_t d : p->value.shape()) out << ' ' << d;
    out << '\n';
    bool first = true;
    for (double v : p->value.data()) {
      if (!first) out << ' ';
      out << hex_double(v);
      first = false;
    }
    out << '\n';
    if (!p->frozen_rows.empty()) {
      out << "frozen " << p->name << ' ';
      for (bool b : p->frozen_rows) out << (b ? '1' : '0');
      out << '\n';
    }
  }
  out << "end\n";
}

inline void save_model(const std::string& path, Model& model) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model archive " + path);
  save_model(out, model);
  if (!out) throw DataError("failed writing model archive " + path);
}

inline Model load_model(std::istream& in, const std::string& source = "<archive>") {
  auto fail = [&](const std::string& what) { return DataError(source + ": " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "daan-model 1") throw fail("not a daan model archive");

  ModelSpec spec;
  std::string expected_hash;
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "spec") {
      std::string key;
      ls >> key;
      if (key == "seq_len") ls >> spec.seq_len;
      else if (key == "embed_dim") ls >> spec.embed_dim;
      else if (key == "hidden") ls >> spec.hidden;
      else if (key == "attention_dim") ls >> spec.attention_dim;
      else if (key == "head_hidden") ls >> spec.head_hidden;
      else if (key == "domain_hidden") ls >> spec.domain_hidden;
      else if (key == "n_domains") ls >> spec.n_domains;
      else if (key == "tasks" || key == "task_weights") {
        std::size_t n = 0;
        ls >> n;
        if (key == "tasks") spec.tasks.assign(n, "");
        else spec.task_weights.assign(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          std::string v;
          ls >> v;
          if (key == "tasks") spec.tasks[i] = v;
          else spec.task_weights[i] = parse_hex_double(v);
        }
      } else {
        std::string v;
        ls >> v;
        if (key == "adversarial") spec.adversarial = v == "1";
        else if (key == "dropout_encoder") spec.dropout_encoder = v == "1";
        else if (key == "dropout_head") spec.dropout_head = v == "1";
        else if (key == "lambda") spec.lambda = parse_hex_double(v);
        else if (key == "domain_weight") spec.domain_weight = parse_hex_double(v);
        else if (key == "dropout") spec.dropout = parse_hex_double(v);
        else throw fail("unknown spec key '" + key + "'");
      }
      if (!ls) throw fail("malformed spec line '" + line + "'");
    } else if (tag == "vocab_hash") {
      ls >> expected_hash;
    } else if (tag == "vocab") {
      std::size_t n = 0;
      ls >> n;
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw fail("truncated vocabulary");
        tokens.push_back(line);
      }
      break;
    } else {
      throw fail("unexpected line '" + line + "'");
    }
  }
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") throw fail("bad vocabulary block");
  Vocab vocab = Vocab::from_tokens(std::vector<std::string>(tokens.begin() + 2, tokens.end()));
  if (hex_u64(vocab.hash()) != expected_hash) throw fail("vocabulary hash mismatch");

  Model model = Model::create(spec, vocab, 0);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name[p->name] = p;
  std::size_t loaded = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag, name;
    ls >> tag;
    if (tag == "end") {
      ended = true;
      break;
    }
    if (tag == "coverage") {
      std::string v;
      ls >> v;
      model.embedding.coverage = parse_hex_double(v);
      continue;
    }
    ls >> name;
    auto it = by_name.find(name);
    if (it == by_name.end()) throw fail("unknown tensor '" + name + "'");
    Parameter& p = *it->second;
    if (tag == "tensor") {
      std::size_t rank = 0;
      ls >> rank;
      Shape shape(rank);
      for (auto& d : shape) ls >> d;
      if (!ls || shape != p.value.shape()) throw fail("shape mismatch for tensor '" + name + "'");
      if (!std::getline(in, line)) throw fail("missing values for tensor '" + name + "'");
      std::istringstream vs(line);
      std::string v;
      std::size_t i = 0;
      while (vs >> v) {
        if (i >= p.value.size()) throw fail("too many values for tensor '" + name + "'");
        p.value[i++] = parse_hex_double(v);
      }
      if (i != p.value.size()) throw fail("too few values for tensor '" + name + "'");
      p.zero_grad();
      ++loaded;
    } else if (tag == "frozen") {
      std::string bits;
      ls >> bits;
      if (bits.size() != p.value.dim(0)) throw fail("frozen mask length mismatch for '" + name + "'");
      p.frozen_rows.assign(bits.size(), false);
      for (std::size_t r = 0; r < bits.size(); ++r) p.frozen_rows[r] = bits[r] == '1';
    } else {
      throw fail("unexpected line '" + line + "'");
    }
  }
  if (!ended) throw fail("archive truncated (no end marker)");
  if (loaded != by_name.size()) throw fail("archive is missing parameter tensors");
  return model;
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model archive " + path);
  return load_model(in, path);
}

}  // namespace daan
