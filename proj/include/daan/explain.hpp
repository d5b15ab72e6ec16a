#pragma once

// Attention reports for single inputs, rendered as ANSI or HTML.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "daan/data.hpp"
#include "daan/metrics.hpp"
#include "daan/models.hpp"

namespace daan {

struct TaskAttention {
  std::string task;
  int prediction = 0;
  double probability = 0.0;  // positive class
  std::vector<double> alpha;  // one per token; 0 for truncated tokens
};

struct AttentionReport {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<bool> truncated;  // token lies past the model's seq_len
  std::vector<TaskAttention> tasks;
};

/// Tokenizes `text` and runs the model in evaluation mode. An input with no
/// tokens gives a report without task entries.
inline AttentionReport explain(Model& model, const std::string& text) {
  AttentionReport r;
  r.text = text;
  r.tokens = tokenize(text);
  const std::size_t seq_len = model.spec.seq_len;
  r.truncated.resize(r.tokens.size());
  for (std::size_t i = 0; i < r.tokens.size(); ++i) r.truncated[i] = i >= seq_len;
  if (r.tokens.empty()) return r;

  Example ex;
  ex.text = text;
  ex.tokens = r.tokens;
  const Batch batch = encode_batch({&ex}, model.vocab, seq_len, model.spec.task_count());
  const Prediction p = predict(model, batch, false);
  const std::size_t kept = std::min(seq_len, r.tokens.size());
  for (std::size_t k = 0; k < model.spec.task_count(); ++k) {
    TaskAttention t;
    t.task = model.spec.tasks[k];
    t.probability = p.probs[k][0];
    t.prediction = decide(t.probability);
    t.alpha.assign(r.tokens.size(), 0.0);
    for (std::size_t i = 0; i < kept; ++i) t.alpha[i] = p.alphas[k][0][i];
    r.tasks.push_back(std::move(t));
  }
  return r;
}

enum class RenderMode { ansi, html };

namespace detail {

// alpha / max(alpha), or 0 everywhere when all weights are 0.
inline std::vector<double> intensities(const std::vector<double>& alpha) {
  const double top = alpha.empty() ? 0.0 : *std::max_element(alpha.begin(), alpha.end());
  std::vector<double> out(alpha.size(), 0.0);
  if (top > 0.0) {
    for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = alpha[i] / top;
  }
  return out;
}

// White at intensity 0, deep red at 1.
struct Rgb {
  int r, g, b;
};

inline Rgb shade(double intensity) {
  const double x = std::clamp(intensity, 0.0, 1.0);
  auto mix = [&](int lo, int hi) { return static_cast<int>(std::lround(lo + (hi - lo) * x)); };
  return {mix(255, 180), mix(255, 20), mix(255, 20)};
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string render_ansi(const AttentionReport& report) {
  std::string out;
  for (const TaskAttention& t : report.tasks) {
    out += t.task + " p=" + fixed(t.probability, 4) + " pred=" + std::to_string(t.prediction) + " |";
    const auto level = intensities(t.alpha);
    bool marked = false;
    for (std::size_t i = 0; i < report.tokens.size(); ++i) {
      out += ' ';
      if (report.truncated[i]) {
        if (!marked) {
          out += "\x1b[2m\xE2\x80\xA6\x1b[0m ";
          marked = true;
        }
        out += "\x1b[2m" + report.tokens[i] + "\x1b[0m";
        continue;
      }
      const Rgb c = shade(level[i]);
      out += "\x1b[48;2;" + std::to_string(c.r) + ';' + std::to_string(c.g) + ';' + std::to_string(c.b) +
             "m\x1b[38;2;0;0;0m" + report.tokens[i] + "\x1b[0m";
    }
    out += '\n';
  }
  return out;
}

inline std::string render_html(const AttentionReport& report) {
  std::string out =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>attention</title>\n"
      "<style>body{font-family:sans-serif}.tok{padding:1px 3px;margin:1px;border-radius:3px}"
      ".truncated{opacity:0.4}.ellipsis{opacity:0.4}</style></head><body>\n";
  out += "<p class=\"text\">" + html_escape(report.text) + "</p>\n";
  for (const TaskAttention& t : report.tasks) {
    out += "<div class=\"task\"><h3>" + html_escape(t.task) + " p=" + fixed(t.probability, 4) +
           " pred=" + std::to_string(t.prediction) + "</h3>\n<p>";
    const auto level = intensities(t.alpha);
    bool marked = false;
    for (std::size_t i = 0; i < report.tokens.size(); ++i) {
      if (report.truncated[i]) {
        if (!marked) {
          out += "<span class=\"ellipsis\">&hellip;</span>";
          marked = true;
        }
        out += "<span class=\"tok truncated\" data-alpha=\"0\">" + html_escape(report.tokens[i]) + "</span>";
        continue;
      }
      const Rgb c = shade(level[i]);
      out += "<span class=\"tok\" data-alpha=\"" + fixed(t.alpha[i], 6) + "\" style=\"background-color:rgb(" +
             std::to_string(c.r) + ',' + std::to_string(c.g) + ',' + std::to_string(c.b) + ")\">" +
             html_escape(report.tokens[i]) + "</span>";
    }
    out += "</p></div>\n";
  }
  out += "</body></html>\n";
  return out;
}

}  // namespace detail

/// Shades each token by alpha / max(alpha), one block per task. Tokens
/// past the model's sequence length are dimmed after an ellipsis marker.
/// A report without tokens renders as an empty string.
inline std::string render_attention(const AttentionReport& report, RenderMode mode) {
  if (report.tokens.empty()) return "";
  if (report.truncated.size() != report.tokens.size()) {
    throw ContractError("attention report: truncation flags do not match tokens");
  }
  for (const TaskAttention& t : report.tasks) {
    if (t.alpha.size() != report.tokens.size()) {
      throw ContractError("attention report: alpha length does not match tokens for task '" + t.task + "'");
    }
  }
  return mode == RenderMode::ansi ? detail::render_ansi(report) : detail::render_html(report);
}

/// The k tokens with the largest weight for `task`, ties broken by position.
inline std::vector<std::string> top_tokens(const AttentionReport& report, std::size_t task, std::size_t k) {
  if (task >= report.tasks.size()) throw ContractError("top_tokens: task index out of range");
  const auto& alpha = report.tasks[task].alpha;
  std::vector<std::size_t> order(alpha.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alpha[a] > alpha[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<std::string> out;
  for (std::size_t i : order) out.push_back(report.tokens[i]);
  return out;
}

}  // namespace daan
