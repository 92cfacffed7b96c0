#include "counts/rewards.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "counts/error.hpp"

namespace counts::rewards {

namespace {

constexpr std::string_view kThinkOpen = "<think>";
constexpr std::string_view kThinkClose = "</think>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";
constexpr std::array<std::string_view, 4> kTags = {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};

bool has_tag(std::string_view s) {
  return std::any_of(kTags.begin(), kTags.end(), [&](std::string_view t) { return s.find(t) != std::string_view::npos; });
}

bool has_open_tag(std::string_view s) {
  return s.find(kThinkOpen) != std::string_view::npos || s.find(kAnswerOpen) != std::string_view::npos;
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Replaces every `\cmd{...}` with its braced contents.
std::string unwrap_command(std::string s, std::string_view cmd) {
  const std::string open = std::string(cmd) + "{";
  for (auto pos = s.find(open); pos != std::string::npos; pos = s.find(open, pos)) {
    int depth = 1;
    std::size_t i = pos + open.size();
    for (; i < s.size() && depth > 0; ++i) {
      if (s[i] == '{') ++depth;
      if (s[i] == '}') --depth;
    }
    if (depth != 0) break;  // unbalanced: leave as is
    s = s.substr(0, pos) + s.substr(pos + open.size(), i - 1 - pos - open.size()) + s.substr(i);
  }
  return s;
}

bool is_wrap_punct(char c) {
  constexpr std::string_view set = ".,;:!?\"'`()[]{}*";
  return set.find(c) != std::string_view::npos;
}

// "(36) foo", "36) foo", "36. foo", "36: foo" -> "foo". Requires text after.
std::string_view strip_option_prefix(std::string_view s) {
  std::size_t i = 0;
  const bool paren = i < s.size() && s[i] == '(';
  if (paren) ++i;
  const std::size_t digits = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == digits) return s;
  bool marked = false;
  if (i < s.size() && (s[i] == ')' || (!paren && (s[i] == '.' || s[i] == ':')))) {
    ++i;
    marked = true;
  }
  if (paren && !marked) return s;
  if (i >= s.size() || !is_space(static_cast<unsigned char>(s[i]))) return s;
  const std::string_view rest = trim(s.substr(i));
  return rest.empty() ? s : rest;
}

bool parse_number(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

}  // namespace

Completion parse_blocks(std::string_view text) {
  Completion c;
  c.raw = std::string(text);
  c.any_tags = has_tag(text);

  std::size_t pos = 0;
  std::size_t text_start = 0;
  auto flush_text = [&](std::size_t end) {
    if (end > text_start) {
      const std::string t(text.substr(text_start, end - text_start));
      if (has_tag(t)) c.stray_tags = true;
      c.segments.push_back({SegmentKind::kText, t, t});
    }
  };

  while (pos < text.size()) {
    const auto t = text.find(kThinkOpen, pos);
    const auto a = text.find(kAnswerOpen, pos);
    if (t == std::string_view::npos && a == std::string_view::npos) break;
    const bool think = a == std::string_view::npos || (t != std::string_view::npos && t < a);
    const std::size_t open = think ? t : a;
    const std::string_view open_tag = think ? kThinkOpen : kAnswerOpen;
    const std::string_view close_tag = think ? kThinkClose : kAnswerClose;
    const std::size_t body_start = open + open_tag.size();
    const auto close = text.find(close_tag, body_start);
    if (close == std::string_view::npos || has_open_tag(text.substr(body_start, close - body_start))) {
      pos = open + 1;  // unterminated or nested: leave the tag as text
      continue;
    }
    flush_text(open);
    const std::string body(text.substr(body_start, close - body_start));
    if (has_tag(body)) c.stray_tags = true;
    const std::size_t end = close + close_tag.size();
    c.segments.push_back({think ? SegmentKind::kThink : SegmentKind::kAnswer,
                          std::string(text.substr(open, end - open)), body});
    (think ? c.thinks : c.answers).push_back(body);
    pos = text_start = end;
  }
  flush_text(text.size());

  if (c.thinks.size() == 1 && c.answers.size() == 1) {
    std::size_t ti = 0, ai = 0;
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
      if (c.segments[i].kind == SegmentKind::kThink) ti = i;
      if (c.segments[i].kind == SegmentKind::kAnswer) ai = i;
    }
    c.think_before_answer = ti < ai;
  }
  return c;
}

double format_reward(const Completion& c) {
  if (c.thinks.size() == 1 && c.answers.size() == 1 && c.think_before_answer && !c.stray_tags) return 1.0;
  if (c.answers.size() == 1) return 0.5;
  if (c.any_tags) return 0.25;
  return 0.0;
}

std::string normalize_answer(std::string_view input) {
  std::string s = unwrap_command(std::string(input), "\\boxed");
  s = unwrap_command(std::move(s), "\\text");
  std::string collapsed;
  bool space = false;
  for (char ch : s) {
    const auto u = static_cast<unsigned char>(ch);
    if (is_space(u)) {
      space = true;
      continue;
    }
    if (space && !collapsed.empty()) collapsed.push_back(' ');
    space = false;
    collapsed.push_back(static_cast<char>(std::tolower(u)));
  }
  std::string_view v = collapsed;
  while (true) {
    const std::string_view before = v;
    v = strip_option_prefix(v);
    while (!v.empty() && is_wrap_punct(v.front())) v.remove_prefix(1);
    while (!v.empty() && is_wrap_punct(v.back())) v.remove_suffix(1);
    v = trim(v);
    if (v == before) break;
  }
  return std::string(v);
}

double exact_match_reward(std::string_view answer, std::string_view target) {
  return normalize_answer(answer) == normalize_answer(target) ? 1.0 : 0.0;
}

double smape(std::span<const double> y, std::span<const double> forecast) {
  if (y.size() != forecast.size()) throw Error("smape: length mismatch");
  if (y.empty()) throw Error("smape: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double den = std::abs(y[i]) + std::abs(forecast[i]);
    if (den > 0.0) s += 2.0 * std::abs(y[i] - forecast[i]) / den;
  }
  return s / double(y.size());
}

double mase(std::span<const double> y, std::span<const double> forecast, std::span<const double> insample,
            int season) {
  if (y.size() != forecast.size()) throw Error("mase: length mismatch");
  if (y.empty()) throw Error("mase: empty input");
  if (season < 1) throw Error("mase: season must be positive");
  const auto m = static_cast<std::size_t>(season);
  if (insample.size() <= m) throw Error("mase: in-sample length must exceed the season");
  double num = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) num += std::abs(y[i] - forecast[i]);
  num /= double(y.size());
  double den = 0.0;
  for (std::size_t t = m; t < insample.size(); ++t) den += std::abs(insample[t] - insample[t - m]);
  den /= double(insample.size() - m);
  if (den == 0.0) throw Error("mase: flat in-sample");
  return num / den;
}

NumberParse parse_numbers(std::string_view text, const tok::Vocab* vocab, const StreamDecoder* decoder) {
  NumberParse r;
  std::string_view s = trim(text);
  if (s.empty()) {
    r.diagnostic = "empty answer";
    return r;
  }
  if (tok::contains_token_text(s)) {
    if (vocab == nullptr || decoder == nullptr || !*decoder) {
      r.diagnostic = "answer holds series tokens but no decoder is configured";
      return r;
    }
    const auto first = s.find('<');
    const auto last = s.rfind('>');
    try {
      const auto stream = tok::parse_text(s.substr(first, last - first + 1), *vocab);
      r.values = (*decoder)(stream);
    } catch (const Error& e) {
      r.diagnostic = std::string("series tokens rejected: ") + e.what();
    }
    return r;
  }
  if ((s.front() == '[' && s.back() == ']') || (s.front() == '(' && s.back() == ')')) {
    s = trim(s.substr(1, s.size() - 2));
  }
  std::vector<double> values;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (is_space(static_cast<unsigned char>(s[i])) || s[i] == ',' || s[i] == ';')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && !is_space(static_cast<unsigned char>(s[j])) && s[j] != ',' && s[j] != ';') ++j;
    double v = 0.0;
    if (!parse_number(s.substr(i, j - i), v)) {
      r.diagnostic = "not a number: '" + std::string(s.substr(i, j - i)) + "'";
      return r;
    }
    values.push_back(v);
    i = j;
  }
  if (values.empty()) {
    r.diagnostic = "no numbers found";
    return r;
  }
  r.values = std::move(values);
  return r;
}

ForecastScore forecast_reward(std::string_view answer, std::span<const double> target, const tok::Vocab* vocab,
                              const StreamDecoder* decoder) {
  if (target.empty()) throw Error("forecast_reward: empty target");
  ForecastScore out;
  const NumberParse p = parse_numbers(answer, vocab, decoder);
  if (!p.values) {
    out.diagnostic = p.diagnostic;
    return out;
  }
  if (p.values->size() != target.size()) {
    out.diagnostic = "length mismatch: got " + std::to_string(p.values->size()) + ", expected " +
                     std::to_string(target.size());
    return out;
  }
  out.parsed = true;
  out.reward = 2.0 - smape(target, *p.values);
  return out;
}

Task task_from_string(const std::string& s) {
  if (s == "mcq" || s == "classification" || s == "classify" || s == "match") return Task::kMatch;
  if (s == "forecast" || s == "forecasting") return Task::kForecast;
  throw Error("unknown reward task '" + s + "'");
}

void RewardSpec::validate() const {
  if (!(w_correct >= 0.0) || !(w_format >= 0.0)) throw Error("reward spec: weights must be non-negative");
  if (task == Task::kForecast && horizon.empty()) throw Error("reward spec: forecasting target is empty");
  if (task == Task::kMatch && trim(label).empty()) throw Error("reward spec: label target is empty");
}

RewardResult score(std::string_view completion, const RewardSpec& spec, const tok::Vocab* vocab,
                   const StreamDecoder* decoder) {
  spec.validate();
  const Completion c = parse_blocks(completion);
  RewardResult r;
  r.format_score = std::min(1.0, format_reward(c));
  if (c.answers.empty()) {
    r.diagnostics = "no answer block";
  } else {
    if (c.answers.size() > 1) r.diagnostics = "multiple answer blocks; graded the last";
    const std::string& answer = c.answers.back();
    if (spec.task == Task::kMatch) {
      r.correctness = exact_match_reward(answer, spec.label);
    } else {
      const ForecastScore f = forecast_reward(answer, spec.horizon, vocab, decoder);
      r.correctness = f.reward;
      if (!f.diagnostic.empty()) r.diagnostics += (r.diagnostics.empty() ? "" : "; ") + f.diagnostic;
    }
  }
  r.total = spec.w_correct * r.correctness + spec.w_format * r.format_score;
  return r;
}

}  // namespace counts::rewards
