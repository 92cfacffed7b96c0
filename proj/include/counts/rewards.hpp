#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "counts/tokenizer.hpp"

namespace counts::rewards {

enum class SegmentKind { kText, kThink, kAnswer };

struct Segment {
  SegmentKind kind;
  std::string raw;  // exact source text, tags included for blocks
  std::string body; // block contents without tags; equals raw for text
};

// Parsed completion. Concatenating segment raws reproduces `raw`.
struct Completion {
  std::string raw;
  std::vector<Segment> segments;
  std::vector<std::string> thinks;
  std::vector<std::string> answers;
  bool stray_tags = false;  // tag literal outside a well-formed block or inside a body
  bool any_tags = false;    // any tag literal anywhere
  bool think_before_answer = false;
};

// Extracts every well-formed, non-nested <think>/<answer> block. Malformed
// tags are left as text; never throws.
Completion parse_blocks(std::string_view text);

// 1.0: exactly one think and one answer, think first, no stray tags.
// 0.5: exactly one answer block otherwise.
// 0.25: tag text present but block counts wrong.
// 0.0: no tag text at all.
double format_reward(const Completion& c);

// Trim, casefold, collapse whitespace, unwrap \boxed{} / \text{}, strip
// surrounding punctuation and leading option numbers such as "(36)".
std::string normalize_answer(std::string_view s);

double exact_match_reward(std::string_view answer, std::string_view target);

// mean 2|y - f| / (|y| + |f|); a term with |y| + |f| = 0 contributes 0.
double smape(std::span<const double> y, std::span<const double> forecast);

// mean|y - f| / mean_{t >= m}|x_t - x_{t-m}| over the in-sample series x.
double mase(std::span<const double> y, std::span<const double> forecast, std::span<const double> insample,
            int season);

// Decodes a token stream back to values; supplied when answers may contain
// rendered series tokens.
using StreamDecoder = std::function<std::vector<double>(const tok::TokenStream&)>;

struct NumberParse {
  std::optional<std::vector<double>> values;
  std::string diagnostic;
};

// Comma/whitespace/semicolon separated numbers, optional surrounding
// brackets, or series-token text when a decoder is given.
NumberParse parse_numbers(std::string_view text, const tok::Vocab* vocab = nullptr,
                          const StreamDecoder* decoder = nullptr);

struct ForecastScore {
  double reward = 0.0;  // 2 - smape, or 0 on parse/length failure
  bool parsed = false;
  std::string diagnostic;
};

ForecastScore forecast_reward(std::string_view answer, std::span<const double> target,
                              const tok::Vocab* vocab = nullptr, const StreamDecoder* decoder = nullptr);

enum class Task { kMatch, kForecast };

Task task_from_string(const std::string& s);

struct RewardSpec {
  Task task = Task::kMatch;
  std::string label;            // kMatch
  std::vector<double> horizon;  // kForecast
  double w_correct = 1.0;
  double w_format = 1.0;

  void validate() const;
};

struct RewardResult {
  double format_score = 0.0;
  double correctness = 0.0;
  double total = 0.0;
  std::string diagnostics;
};

// Correctness is graded on the last answer block; no answer block scores 0.
RewardResult score(std::string_view completion, const RewardSpec& spec, const tok::Vocab* vocab = nullptr,
                   const StreamDecoder* decoder = nullptr);

}  // namespace counts::rewards
