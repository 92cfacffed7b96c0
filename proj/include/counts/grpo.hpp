#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "counts/nn.hpp"
#include "counts/rewards.hpp"
#include "counts/rng.hpp"
#include "counts/tokenizer.hpp"

namespace counts::grpo {

enum class Variant { kGrpo, kDapo };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

inline constexpr double kAdvantageEps = 1e-6;

// grpo: (r - mean) / (std + eps) with the population std.
// dapo: r - mean.
// Equal rewards give exact zeros in both. Throws for fewer than two rewards.
std::vector<double> advantages(std::span<const double> rewards, Variant variant);

double population_std(std::span<const double> values);

// ---------------------------------------------------------------------------

struct PolicyConfig {
  int hidden = 64;
  int blocks = 2;
  int ff = 64;
  int max_len = 8;
  double temperature = 1.0;
  double embed_std = 0.1;  // init std of rows not taken from codebooks

  bool operator==(const PolicyConfig&) const = default;
};

// Categorical sequence model over a small action vocabulary.
//
// Embedding rows: [0, V) tokenizer tokens (series-token rows start as the
// codebook vectors), then one row per action, then a begin row. The input for
// position t is [mean prompt embedding scaled to unit RMS | embedding of the previous action |
// one-hot t], fed through an MLP whose output is the action logits.
class ToyPolicy {
 public:
  ToyPolicy() = default;

  static ToyPolicy create(const PolicyConfig& config, const tok::TokenizerModel& tokenizer,
                          std::vector<std::string> actions, Rng& rng);

  const PolicyConfig& config() const { return config_; }
  const std::vector<std::string>& actions() const { return actions_; }
  int action_count() const { return static_cast<int>(actions_.size()); }
  int token_vocab() const { return token_vocab_; }
  int embed_dim() const { return static_cast<int>(embedding.cols()); }
  int input_dim() const { return 2 * embed_dim() + config_.max_len; }
  int eos() const { return eos_; }  // -1 when there is no "<eos>" action
  int begin_row() const { return token_vocab_ + action_count(); }

  nn::Column<double> prompt_feature(std::span<const int> prompt) const;

  // Row t holds the input that predicts actions[t] (prefix actions[0..t)).
  nn::Tensor<double> inputs(const nn::Column<double>& feature, std::span<const int> actions) const;

  // Softmax(logits / temperature), row per input row.
  nn::Tensor<double> probabilities(const nn::Tensor<double>& inputs) const;
  std::vector<double> distribution(std::span<const int> prompt, std::span<const int> prefix) const;

  std::vector<double> token_logprobs(std::span<const int> prompt, std::span<const int> actions) const;

  struct Sample {
    std::vector<int> actions;
    std::vector<double> logprobs;
  };
  // Draws until "<eos>" or max_len actions.
  Sample sample(std::span<const int> prompt, Rng& rng) const;

  // Space-joined action strings, "<eos>" omitted.
  std::string render(std::span<const int> actions) const;

  // Same shapes, all zero.
  ToyPolicy zeros_like() const;
  std::vector<nn::Tensor<double>*> parameters();
  std::size_t parameter_count() const;

  nn::Tensor<double> embedding;
  nn::Mlp<double> net;

 private:
  PolicyConfig config_;
  std::vector<std::string> actions_;
  int token_vocab_ = 0;
  int eos_ = -1;
};

struct RolloutGroup {
  std::string prompt_id;
  std::vector<int> prompt;                      // tokenizer ids
  std::vector<std::vector<int>> completions;    // G action sequences
  std::vector<std::vector<double>> old_logprobs;
  std::vector<double> rewards;
  std::vector<double> advantages;
  Variant variant = Variant::kGrpo;

  int size() const { return static_cast<int>(completions.size()); }
  // Fills advantages from rewards.
  void compute_advantages(Variant v);
};

struct SurrogateStats {
  double objective = 0.0;      // mean over groups of the token-mean clipped surrogate
  double clip_fraction = 0.0;  // share of tokens whose ratio left [1-eps, 1+eps]
  double mean_ratio = 0.0;
  int tokens = 0;
  int skipped = 0;             // groups dropped for non-finite ratios
};

// Clipped surrogate per token, min(rho a, clip(rho, 1-eps, 1+eps) a),
// averaged over the tokens of each group and then over groups. When `grad`
// is given (shaped like zeros_like()), d objective / d parameters is added.
SurrogateStats surrogate(const ToyPolicy& policy, std::span<const RolloutGroup> groups, double clip_eps,
                         ToyPolicy* grad = nullptr);

enum class OptimizerKind { kSgd, kAdam };

struct PolicyOptimizer {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 3e-3;
  nn::Adam<double> adam;
};

struct UpdateStats {
  SurrogateStats surrogate;
  double grad_norm = 0.0;
  bool updated = false;  // false when every advantage was zero or all groups were skipped
};

// One inner epoch: a single ascent step on the surrogate.
UpdateStats policy_gradient_step(ToyPolicy& policy, std::span<const RolloutGroup> groups,
                                 PolicyOptimizer& opt, double clip_eps);

// Mean per-token KL(policy || reference) over the contexts visited by the groups.
double kl_to(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const RolloutGroup> groups);

// ---------------------------------------------------------------------------

enum class TaskKind { kClassify, kForecast };

std::string to_string(TaskKind t);
TaskKind task_kind_from_string(const std::string& s);

// Action strings for a task: the four tags, task answers, a filler and <eos>.
std::vector<std::string> task_actions(TaskKind task);

struct TaskExample {
  std::string id;
  ts::Series series;
  std::vector<int> prompt;  // tokenizer ids of the encoded context
  rewards::RewardSpec spec;
  std::string label;  // the correct answer action
};

// classify: sine (period 16 to 64) / trend / noise, 256 samples at a random scale.
// forecast: 4 context patches of a noisy sinusoid; the target is the next
// patch mean in units of the last context scale, and the label is the nearest
// of the nine answer values in [-1, 1].
TaskExample make_task(TaskKind task, const tok::TokenizerModel& tokenizer, Rng& rng);

struct RlConfig {
  TaskKind task = TaskKind::kClassify;
  Variant variant = Variant::kGrpo;
  int steps = 500;
  int group_size = 8;
  int prompts_per_step = 64;
  double lr = 1e-3;
  double clip_eps = 0.2;
  double w_correct = 1.0;
  double w_format = 1.0;
  int eval_prompts = 256;
  int window = 50;  // steps per reward-curve window
  std::uint64_t seed = 0;
  PolicyConfig policy;

  void validate() const;
};

nlohmann::json to_json(const RlConfig& c);
RlConfig rl_config_from_json(const nlohmann::json& j);

struct RlStep {
  int step = 0;
  double mean_reward = 0.0;
  double format_rate = 0.0;  // share of completions with format score 1
  double accuracy = 0.0;     // share whose last answer matches the label
  double kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int skipped = 0;

  nlohmann::json to_json() const;
};

struct RlEval {
  double mean_reward = 0.0;
  double format_rate = 0.0;
  double accuracy = 0.0;
  int prompts = 0;

  nlohmann::json to_json() const;
};

struct RlResult {
  std::vector<RlStep> curve;
  std::vector<double> window_means;  // mean reward per consecutive window
  RlEval initial;
  RlEval final;
  double max_reward = 0.0;  // w_correct * bound + w_format
};

// Samples completions for fresh prompts every step and applies one
// policy-gradient update per step. Deterministic for a given seed.
RlResult rl_demo(const tok::TokenizerModel& tokenizer, const RlConfig& config,
                 const std::function<void(const RlStep&)>& on_step = {});

RlEval evaluate_policy(const ToyPolicy& policy, const tok::TokenizerModel& tokenizer, const RlConfig& config,
                       std::uint64_t stream);

// Scores one rendered completion against a task example.
struct Graded {
  double reward = 0.0;
  bool well_formed = false;
  bool correct = false;
};
Graded grade(const std::string& completion, const TaskExample& ex);

}  // namespace counts::grpo
