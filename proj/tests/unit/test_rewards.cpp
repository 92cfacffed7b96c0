#include <doctest.h>

#include <random>

#include "counts/error.hpp"
#include "counts/rewards.hpp"
#include "oracles.hpp"

using namespace counts;
using namespace counts::rewards;

TEST_CASE("parse_blocks extracts well-formed blocks losslessly") {
  const std::string text = "pre <think>a</think> mid <answer>b</answer> post";
  const Completion c = parse_blocks(text);
  CHECK(c.thinks == std::vector<std::string>{"a"});
  CHECK(c.answers == std::vector<std::string>{"b"});
  CHECK(c.think_before_answer);
  CHECK_FALSE(c.stray_tags);
  std::string joined;
  for (const auto& s : c.segments) joined += s.raw;
  CHECK(joined == text);
}

TEST_CASE("parse_blocks tolerates malformed input") {
  CHECK(parse_blocks("<answer>x").answers.empty());
  CHECK(parse_blocks("<answer>x").stray_tags);
  CHECK(parse_blocks("<answer>1</answer><answer>2</answer>").answers.size() == 2);
  const Completion nested = parse_blocks("<think>a<think>b</think>c</think>");
  CHECK(nested.thinks == std::vector<std::string>{"b"});
  CHECK(nested.stray_tags);
  CHECK(parse_blocks("").segments.empty());

  std::mt19937_64 rng(1);
  const std::vector<std::string> pieces = {"<think>", "</think>", "<answer>", "</answer>", "x", " ", "<", ">"};
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    for (int k = 0; k < 8; ++k) s += pieces[rng() % pieces.size()];
    const Completion c = parse_blocks(s);
    std::string joined;
    for (const auto& seg : c.segments) joined += seg.raw;
    REQUIRE(joined == s);
  }
}

TEST_CASE("format reward schedule") {
  CHECK(format_reward(parse_blocks("<think>r</think><answer>a</answer>")) == 1.0);
  CHECK(format_reward(parse_blocks("<think>r</think>\n<answer>a</answer>\n")) == 1.0);
  CHECK(format_reward(parse_blocks("<answer>a</answer>")) == 0.5);
  CHECK(format_reward(parse_blocks("<answer>a</answer><think>r</think>")) == 0.5);
  CHECK(format_reward(parse_blocks("<think>r</think><answer>a</answer></think>")) == 0.5);
  CHECK(format_reward(parse_blocks("<think>r</think>")) == 0.25);
  CHECK(format_reward(parse_blocks("<answer>a</answer><answer>b</answer>")) == 0.25);
  CHECK(format_reward(parse_blocks("<answer>a")) == 0.25);
  CHECK(format_reward(parse_blocks("just text")) == 0.0);
  // Content does not matter.
  CHECK(format_reward(parse_blocks("<think>zzz</think><answer>1, 2, 3</answer>")) == 1.0);
}

TEST_CASE("exact match normalization") {
  CHECK(exact_match_reward(" Long QT-interval ", "long qt-interval") == 1.0);
  CHECK(exact_match_reward("(36) subendocardial injury in inferolateral leads",
                           "subendocardial injury in inferolateral leads") == 1.0);
  CHECK(exact_match_reward("\\boxed{(36) subendocardial injury in inferolateral leads}",
                           "subendocardial injury in inferolateral leads") == 1.0);
  CHECK(exact_match_reward("none", "long qt-interval") == 0.0);
  CHECK(exact_match_reward("\"Sine.\"", "sine") == 1.0);
  CHECK(exact_match_reward("B) trend", "trend") == 0.0);  // only numeric option prefixes
  CHECK(exact_match_reward("sine wave", "sine") == 0.0);
  CHECK(normalize_answer("  A\t\tB  ") == "a b");
  CHECK(normalize_answer("-0.25") == "-0.25");
}

TEST_CASE("smape cases") {
  const std::vector<double> y = {1.0}, f3 = {3.0}, fm = {-1.0};
  CHECK(smape(y, y) == 0.0);
  CHECK(std::abs(smape(y, f3) - 1.0) <= 1e-12);
  CHECK(std::abs(smape(y, fm) - 2.0) <= 1e-12);
  CHECK(smape(std::vector<double>{0.0, 2.0}, std::vector<double>{0.0, 2.0}) == 0.0);
  CHECK_THROWS_AS(smape(y, std::vector<double>{1.0, 2.0}), Error);
  CHECK_THROWS_AS(smape(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("smape properties against the reference") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> y(10), f(10);
    for (int i = 0; i < 10; ++i) {
      y[static_cast<std::size_t>(i)] = n(rng);
      f[static_cast<std::size_t>(i)] = n(rng);
    }
    const double s = smape(y, f);
    CHECK(s == doctest::Approx(oracle::smape_ref(y, f)).epsilon(1e-12));
    CHECK(s == doctest::Approx(smape(f, y)).epsilon(1e-12));
    CHECK(s >= 0.0);
    CHECK(s <= 2.0);
    std::vector<double> ys = y, fs = f;
    for (auto& v : ys) v *= 37.5;
    for (auto& v : fs) v *= 37.5;
    CHECK(smape(ys, fs) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("forecast reward") {
  const std::vector<double> y = {1.0, 2.0, 3.0};
  CHECK(forecast_reward("1, 2, 3", y).reward == 2.0);
  CHECK(forecast_reward("[1 2 3]", y).reward == 2.0);
  CHECK(forecast_reward("1;2;3", y).parsed);
  CHECK(forecast_reward("3", std::vector<double>{1.0}).reward == 1.0);
  const auto empty = forecast_reward("", y);
  CHECK(empty.reward == 0.0);
  CHECK_FALSE(empty.parsed);
  const auto short_ = forecast_reward("1, 2", y);
  CHECK(short_.reward == 0.0);
  CHECK_FALSE(short_.diagnostic.empty());
  CHECK(forecast_reward("one two three", y).reward == 0.0);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> target(4), guess(4);
    std::string text;
    for (int i = 0; i < 4; ++i) {
      target[static_cast<std::size_t>(i)] = u(rng);
      guess[static_cast<std::size_t>(i)] = u(rng);
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g ", guess[static_cast<std::size_t>(i)]);
      text += buf;
    }
    const auto r = forecast_reward(text, target);
    REQUIRE(r.parsed);
    CHECK(r.reward + smape(target, guess) == 2.0);
  }
}

TEST_CASE("mase") {
  const std::vector<double> insample = {1, 2, 3, 1, 2, 3, 1, 2, 3};
  const std::vector<double> y = {1, 2, 3};
  CHECK(mase(y, y, insample, 1) == 0.0);
  CHECK_THROWS_WITH_AS(mase(y, y, insample, 3), doctest::Contains("flat"), Error);
  // In-sample naive error with season 1: |diffs| = 1,1,2,1,1,2,1,1 -> mean 10/8.
  const std::vector<double> f = {2, 3, 4};
  CHECK(mase(y, f, insample, 1) == doctest::Approx(1.0 / (10.0 / 8.0)));
  // Seasonal-naive forecast on a series whose seasonal pattern drifts by a constant.
  const std::vector<double> drift = {0, 1, 2, 1, 2, 3, 2, 3, 4};
  const std::vector<double> naive = {2, 3, 4}, truth = {3, 4, 5};
  CHECK(mase(truth, naive, drift, 3) == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(mase(y, f, std::vector<double>{2, 2, 2, 2}, 1), doctest::Contains("flat"), Error);
  CHECK_THROWS_AS(mase(y, f, std::vector<double>{1, 2}, 3), Error);
}

TEST_CASE("score combines weighted components on the last answer") {
  RewardSpec spec;
  spec.label = "subendocardial injury in inferolateral leads";
  auto r = score("<think>ST depression</think><answer>(36) subendocardial injury in inferolateral leads</answer>",
                 spec);
  CHECK(r.format_score == 1.0);
  CHECK(r.correctness == 1.0);
  CHECK(r.total == 2.0);

  spec.w_format = 0.5;
  r = score("<answer>wrong</answer><answer>subendocardial injury in inferolateral leads</answer>", spec);
  CHECK(r.format_score == 0.25);
  CHECK(r.correctness == 1.0);
  CHECK(r.total == 1.0 + 0.5 * 0.25);

  r = score("no tags at all", spec);
  CHECK(r.total == 0.0);

  RewardSpec fc;
  fc.task = Task::kForecast;
  fc.horizon = {1.0};
  r = score("<think>.</think><answer>3</answer>", fc);
  CHECK(r.correctness == 1.0);
  CHECK(r.total == 2.0);
  fc.horizon.clear();
  CHECK_THROWS_AS(fc.validate(), Error);
  RewardSpec neg;
  neg.w_correct = -1.0;
  CHECK_THROWS_AS(neg.validate(), Error);
  CHECK(task_from_string("mcq") == Task::kMatch);
  CHECK(task_from_string("forecast") == Task::kForecast);
  CHECK_THROWS_AS(task_from_string("judge"), Error);
}
