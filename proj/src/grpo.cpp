#include "counts/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "counts/error.hpp"
#include "counts/log.hpp"

namespace counts::grpo {

namespace {

enum StreamKey : std::uint64_t { kPolicyKey = 11, kStepKey, kEvalKey };

const char* const kEos = "<eos>";

}  // namespace

std::string to_string(Variant v) { return v == Variant::kDapo ? "dapo" : "grpo"; }

Variant variant_from_string(const std::string& s) {
  if (s == "grpo") return Variant::kGrpo;
  if (s == "dapo") return Variant::kDapo;
  throw Error("unknown advantage variant '" + s + "'");
}

double population_std(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / double(values.size()));
}

std::vector<double> advantages(std::span<const double> rewards, Variant variant) {
  if (rewards.size() < 2) throw Error("advantages: a group needs at least two rewards");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw Error("advantages: non-finite reward");
  }
  std::vector<double> a(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards.front(); })) return a;
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / double(rewards.size());
  const double denom = variant == Variant::kGrpo ? population_std(rewards) + kAdvantageEps : 1.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = (rewards[i] - mean) / denom;
  return a;
}

void RolloutGroup::compute_advantages(Variant v) {
  if (rewards.size() != completions.size()) throw Error("rollout group: reward count differs from completions");
  advantages = grpo::advantages(rewards, v);
  variant = v;
}

// ---------------------------------------------------------------------------

ToyPolicy ToyPolicy::create(const PolicyConfig& config, const tok::TokenizerModel& tokenizer,
                            std::vector<std::string> actions, Rng& rng) {
  if (actions.empty()) throw Error("toy policy: empty action vocabulary");
  if (config.max_len < 1 || config.hidden < 1 || config.blocks < 1 || config.ff < 1) {
    throw Error("toy policy: bad configuration");
  }
  if (!(config.temperature > 0.0)) throw Error("toy policy: temperature must be positive");
  ToyPolicy p;
  p.config_ = config;
  p.actions_ = std::move(actions);
  const tok::Vocab vocab = tokenizer.vocab();
  p.token_vocab_ = vocab.size();
  const auto it = std::find(p.actions_.begin(), p.actions_.end(), kEos);
  p.eos_ = it == p.actions_.end() ? -1 : static_cast<int>(it - p.actions_.begin());

  const int d = tokenizer.config.embed_dim;
  std::normal_distribution<double> normal(0.0, config.embed_std);
  p.embedding.resize(p.token_vocab_ + p.action_count() + 1, d);
  for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = normal(rng);

  // Series-token rows copy the codebooks, rescaled to unit RMS overall.
  if (tokenizer.ready()) {
    double ss = 0.0, n = 0.0;
    for (const auto& book : tokenizer.rvq.codebooks()) {
      ss += book.vectors.cast<double>().squaredNorm();
      n += double(book.vectors.size());
    }
    const double rms = std::sqrt(ss / std::max(n, 1.0));
    const double s = rms > 0.0 ? 1.0 / rms : 1.0;
    for (const auto& book : tokenizer.rvq.codebooks()) {
      for (int j = 0; j < book.size(); ++j) {
        p.embedding.row(vocab.series_token(book.level, j)) = book.vectors.row(j).cast<double>() * s;
      }
    }
  }
  p.net = nn::Mlp<double>::init({p.input_dim(), config.hidden, p.action_count(), config.blocks, config.ff}, rng);
  return p;
}

nn::Column<double> ToyPolicy::prompt_feature(std::span<const int> prompt) const {
  nn::Column<double> f = nn::Column<double>::Zero(embed_dim());
  for (int id : prompt) {
    if (id < 0 || id >= token_vocab_) throw Error("toy policy: prompt token out of range");
    f += embedding.row(id).transpose();
  }
  // Unit RMS, so the prompt carries as much weight as the other inputs.
  const double rms = f.norm() / std::sqrt(double(f.size()));
  if (rms > 0.0) f /= rms;
  return f;
}

nn::Tensor<double> ToyPolicy::inputs(const nn::Column<double>& feature, std::span<const int> actions) const {
  const int d = embed_dim();
  if (static_cast<int>(actions.size()) > config_.max_len) throw Error("toy policy: completion longer than max_len");
  nn::Tensor<double> x = nn::Tensor<double>::Zero(static_cast<Eigen::Index>(actions.size()), input_dim());
  for (std::size_t t = 0; t < actions.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t);
    const int prev = t == 0 ? begin_row() : token_vocab_ + actions[t - 1];
    if (actions[t] < 0 || actions[t] >= action_count()) throw Error("toy policy: action out of range");
    x.block(r, 0, 1, d) = feature.transpose();
    x.block(r, d, 1, d) = embedding.row(prev);
    x(r, 2 * d + r) = 1.0;
  }
  return x;
}

namespace {

nn::Tensor<double> softmax_rows(const nn::Tensor<double>& logits, double temperature) {
  nn::Tensor<double> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::RowVectorXd z = logits.row(i) / temperature;
    const Eigen::RowVectorXd e = (z.array() - z.maxCoeff()).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

}  // namespace

nn::Tensor<double> ToyPolicy::probabilities(const nn::Tensor<double>& x) const {
  return softmax_rows(net.forward(x), config_.temperature);
}

std::vector<double> ToyPolicy::distribution(std::span<const int> prompt, std::span<const int> prefix) const {
  std::vector<int> seq(prefix.begin(), prefix.end());
  seq.push_back(0);  // placeholder for the position being predicted
  const auto x = inputs(prompt_feature(prompt), seq);
  const auto p = probabilities(x.bottomRows(1));
  return {p.data(), p.data() + p.size()};
}

std::vector<double> ToyPolicy::token_logprobs(std::span<const int> prompt, std::span<const int> actions) const {
  if (actions.empty()) return {};
  const auto p = probabilities(inputs(prompt_feature(prompt), actions));
  std::vector<double> out(actions.size());
  for (std::size_t t = 0; t < actions.size(); ++t) out[t] = std::log(p(static_cast<Eigen::Index>(t), actions[t]));
  return out;
}

ToyPolicy::Sample ToyPolicy::sample(std::span<const int> prompt, Rng& rng) const {
  const auto feature = prompt_feature(prompt);
  Sample s;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<int> seq;
  for (int t = 0; t < config_.max_len; ++t) {
    seq.push_back(0);
    const auto x = inputs(feature, seq);
    const auto p = probabilities(x.bottomRows(1));
    const double u = uni(rng);
    int a = action_count() - 1;
    double c = 0.0;
    for (int k = 0; k < action_count(); ++k) {
      c += p(0, k);
      if (u < c) {
        a = k;
        break;
      }
    }
    seq.back() = a;
    s.actions.push_back(a);
    s.logprobs.push_back(std::log(p(0, a)));
    if (a == eos_) break;
  }
  return s;
}

std::string ToyPolicy::render(std::span<const int> actions) const {
  std::string out;
  for (int a : actions) {
    if (a == eos_) continue;
    if (!out.empty()) out += ' ';
    out += actions_.at(static_cast<std::size_t>(a));
  }
  return out;
}

ToyPolicy ToyPolicy::zeros_like() const {
  ToyPolicy z = *this;
  z.embedding.setZero();
  z.net.set_zero();
  return z;
}

std::vector<nn::Tensor<double>*> ToyPolicy::parameters() {
  std::vector<nn::Tensor<double>*> out{&embedding};
  const auto p = net.parameters();
  out.insert(out.end(), p.begin(), p.end());
  return out;
}

std::size_t ToyPolicy::parameter_count() const {
  return static_cast<std::size_t>(embedding.size()) + net.parameter_count();
}

// ---------------------------------------------------------------------------

SurrogateStats surrogate(const ToyPolicy& policy, std::span<const RolloutGroup> groups, double clip_eps,
                         ToyPolicy* grad) {
  if (!(clip_eps >= 0.0)) throw Error("surrogate: clip epsilon must be non-negative");
  SurrogateStats st;
  ToyPolicy local;
  if (grad) local = policy.zeros_like();
  const int d = policy.embed_dim();
  const double lo = 1.0 - clip_eps, hi = 1.0 + clip_eps;
  int used = 0, clipped = 0;
  double ratio_sum = 0.0;

  for (const auto& g : groups) {
    if (g.advantages.size() != g.completions.size() || g.old_logprobs.size() != g.completions.size()) {
      throw Error("surrogate: group '" + g.prompt_id + "' is missing advantages or log-probabilities");
    }
    const auto feature = policy.prompt_feature(g.prompt);
    std::vector<nn::Tensor<double>> parts;
    std::vector<double> adv, old;
    std::vector<int> act, prev;
    Eigen::Index rows = 0;
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const auto& c = g.completions[i];
      if (g.old_logprobs[i].size() != c.size()) throw Error("surrogate: log-probability count differs from tokens");
      parts.push_back(policy.inputs(feature, c));
      rows += static_cast<Eigen::Index>(c.size());
      for (std::size_t t = 0; t < c.size(); ++t) {
        adv.push_back(g.advantages[i]);
        old.push_back(g.old_logprobs[i][t]);
        act.push_back(c[t]);
        prev.push_back(t == 0 ? policy.begin_row() : policy.token_vocab() + c[t - 1]);
      }
    }
    if (rows == 0) continue;
    nn::Tensor<double> x(rows, policy.input_dim());
    Eigen::Index r0 = 0;
    for (const auto& p : parts) {
      x.middleRows(r0, p.rows()) = p;
      r0 += p.rows();
    }
    nn::Mlp<double>::Cache cache;
    const auto logits = policy.net.forward(x, cache);
    const auto prob = softmax_rows(logits, policy.config().temperature);

    std::vector<double> ratio(static_cast<std::size_t>(rows));
    bool finite = true;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto ru = static_cast<std::size_t>(r);
      ratio[ru] = std::exp(std::log(prob(r, act[ru])) - old[ru]);
      finite = finite && std::isfinite(ratio[ru]);
    }
    if (!finite) {
      ++st.skipped;
      log::warn("surrogate: non-finite probability ratio in group '" + g.prompt_id + "', skipped");
      continue;
    }

    const double n = double(rows);
    double obj = 0.0;
    nn::Tensor<double> dlogits = nn::Tensor<double>::Zero(rows, logits.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto ru = static_cast<std::size_t>(r);
      const double rho = ratio[ru];
      const double a = adv[ru];
      const double unclipped = rho * a;
      const double bounded = std::clamp(rho, lo, hi) * a;
      obj += std::min(unclipped, bounded);
      if (rho < lo || rho > hi) ++clipped;
      ratio_sum += rho;
      if (grad && unclipped <= bounded && a != 0.0) {
        // d(rho a)/d logits = a rho (onehot - p) / temperature
        const double coef = a * rho / (n * policy.config().temperature);
        dlogits.row(r) = -coef * prob.row(r);
        dlogits(r, act[ru]) += coef;
      }
    }
    st.objective += obj / n;
    st.tokens += static_cast<int>(rows);
    ++used;

    if (grad) {
      const auto dx = policy.net.backward(cache, dlogits, local.net);
      if (!g.prompt.empty()) {
        // Back through f = m / rms(m), with m the mean prompt embedding.
        nn::Column<double> m = nn::Column<double>::Zero(d);
        for (int id : g.prompt) m += policy.embedding.row(id).transpose();
        m /= double(g.prompt.size());
        const double rms = m.norm() / std::sqrt(double(d));
        if (rms > 0.0) {
          const Eigen::RowVectorXd gf = dx.leftCols(d).colwise().sum();
          const Eigen::RowVectorXd f = feature.transpose();
          const Eigen::RowVectorXd dm = (gf - f * (f.dot(gf) / double(d))) / rms;
          for (int id : g.prompt) local.embedding.row(id) += dm / double(g.prompt.size());
        }
      }
      for (Eigen::Index r = 0; r < rows; ++r) {
        local.embedding.row(prev[static_cast<std::size_t>(r)]) += dx.block(r, d, 1, d);
      }
    }
  }

  if (used > 0) {
    st.objective /= double(used);
    if (grad) {
      auto dst = grad->parameters();
      auto src = local.parameters();
      for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] += *src[i] / double(used);
    }
  }
  if (st.tokens > 0) {
    st.clip_fraction = double(clipped) / double(st.tokens);
    st.mean_ratio = ratio_sum / double(st.tokens);
  }
  return st;
}

UpdateStats policy_gradient_step(ToyPolicy& policy, std::span<const RolloutGroup> groups, PolicyOptimizer& opt,
                                 double clip_eps) {
  UpdateStats us;
  const bool any_signal = std::any_of(groups.begin(), groups.end(), [](const RolloutGroup& g) {
    return std::any_of(g.advantages.begin(), g.advantages.end(), [](double a) { return a != 0.0; });
  });
  if (!any_signal) {
    us.surrogate = surrogate(policy, groups, clip_eps);
    return us;
  }
  ToyPolicy grad = policy.zeros_like();
  us.surrogate = surrogate(policy, groups, clip_eps, &grad);
  if (us.surrogate.skipped == static_cast<int>(groups.size())) return us;

  auto params = policy.parameters();
  auto gparams = grad.parameters();
  std::vector<const nn::Tensor<double>*> gconst(gparams.begin(), gparams.end());
  us.grad_norm = std::sqrt(nn::squared_norm(gconst));
  if (opt.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] += opt.lr * *gparams[i];
  } else {
    // Adam minimises, so hand it the negated ascent direction.
    for (auto* g : gparams) *g = -*g;
    opt.adam.step(params, gconst, opt.lr);
  }
  us.updated = true;
  return us;
}

double kl_to(const ToyPolicy& policy, const ToyPolicy& reference, std::span<const RolloutGroup> groups) {
  double kl = 0.0;
  int tokens = 0;
  for (const auto& g : groups) {
    const auto fp = policy.prompt_feature(g.prompt);
    const auto fq = reference.prompt_feature(g.prompt);
    for (const auto& c : g.completions) {
      if (c.empty()) continue;
      const auto p = policy.probabilities(policy.inputs(fp, c));
      const auto q = reference.probabilities(reference.inputs(fq, c));
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        for (Eigen::Index k = 0; k < p.cols(); ++k) {
          if (p(r, k) > 0.0) kl += p(r, k) * (std::log(p(r, k)) - std::log(q(r, k)));
        }
      }
      tokens += static_cast<int>(c.size());
    }
  }
  return tokens > 0 ? kl / double(tokens) : 0.0;
}

// ---------------------------------------------------------------------------

std::string to_string(TaskKind t) { return t == TaskKind::kForecast ? "forecast" : "classify"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classify") return TaskKind::kClassify;
  if (s == "forecast") return TaskKind::kForecast;
  throw Error("unknown rl task '" + s + "'");
}

namespace {

const std::vector<std::string> kClassLabels = {"sine", "trend", "noise"};
const std::vector<std::string> kForecastValues = {"-1", "-0.75", "-0.5", "-0.25", "0",
                                                  "0.25", "0.5", "0.75", "1"};

std::vector<int> prompt_tokens(const ts::Series& s, const tok::TokenizerModel& tokenizer) {
  const auto stream = tok::encode_detailed(s, tokenizer).stream;
  const tok::Vocab vocab = tokenizer.vocab();
  std::vector<int> out{vocab.begin_token()};
  out.insert(out.end(), stream.tokens.begin(), stream.tokens.end());
  out.push_back(vocab.end_token());
  return out;
}

}  // namespace

std::vector<std::string> task_actions(TaskKind task) {
  std::vector<std::string> a = {"<think>", "</think>", "<answer>", "</answer>"};
  const auto& answers = task == TaskKind::kClassify ? kClassLabels : kForecastValues;
  a.insert(a.end(), answers.begin(), answers.end());
  a.push_back("so");
  a.push_back(kEos);
  return a;
}

TaskExample make_task(TaskKind task, const tok::TokenizerModel& tokenizer, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double amp = std::pow(10.0, -2.0 + 5.0 * uni(rng));
  TaskExample ex;
  ex.spec.w_correct = 1.0;
  ex.spec.w_format = 1.0;

  if (task == TaskKind::kClassify) {
    const std::size_t n = 256;
    const int cls = std::uniform_int_distribution<int>(0, 2)(rng);
    ex.label = kClassLabels[static_cast<std::size_t>(cls)];
    ex.series.values.resize(n);
    if (cls == 0) {
      const double period = std::exp(std::log(16.0) + (std::log(64.0) - std::log(16.0)) * uni(rng));
      const double phase = 2.0 * std::numbers::pi * uni(rng);
      for (std::size_t t = 0; t < n; ++t) {
        ex.series.values[t] = amp * (std::sin(2.0 * std::numbers::pi * double(t) / period + phase) + 0.02 * normal(rng));
      }
    } else if (cls == 1) {
      const double sign = uni(rng) < 0.5 ? -1.0 : 1.0;
      const double offset = uni(rng) - 0.5;
      for (std::size_t t = 0; t < n; ++t) {
        const double ramp = -1.0 + 2.0 * double(t) / double(n - 1);
        ex.series.values[t] = amp * (sign * ramp + offset + 0.02 * normal(rng));
      }
    } else {
      for (std::size_t t = 0; t < n; ++t) ex.series.values[t] = amp * normal(rng);
    }
    ex.spec.task = rewards::Task::kMatch;
    ex.spec.label = ex.label;
  } else {
    const std::size_t ctx = 4 * ts::kPatchLength;
    const std::size_t n = ctx + ts::kPatchLength;
    const double period = std::exp(std::log(16.0) + (std::log(128.0) - std::log(16.0)) * uni(rng));
    const double phase = 2.0 * std::numbers::pi * uni(rng);
    const double offset = uni(rng) - 0.5;
    std::vector<double> v(n);
    for (std::size_t t = 0; t < n; ++t) {
      v[t] = amp * (offset + std::sin(2.0 * std::numbers::pi * double(t) / period + phase) + 0.05 * normal(rng));
    }
    ex.series.values.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(ctx));
    const int k = ts::compute_scale(std::span<const double>(v).subspan(ctx - ts::kPatchLength, ts::kPatchLength));
    double mean = 0.0;
    for (std::size_t t = ctx; t < n; ++t) mean += v[t];
    mean /= double(ts::kPatchLength);
    const double target = std::ldexp(mean, -k);
    std::size_t best = 0;
    for (std::size_t i = 1; i < kForecastValues.size(); ++i) {
      if (std::abs(std::stod(kForecastValues[i]) - target) < std::abs(std::stod(kForecastValues[best]) - target)) {
        best = i;
      }
    }
    ex.label = kForecastValues[best];
    ex.spec.task = rewards::Task::kForecast;
    ex.spec.horizon = {target};
  }
  ex.series.id = to_string(task);
  ex.prompt = prompt_tokens(ex.series, tokenizer);
  return ex;
}

Graded grade(const std::string& completion, const TaskExample& ex) {
  const auto res = rewards::score(completion, ex.spec);
  const auto blocks = rewards::parse_blocks(completion);
  Graded g;
  g.reward = res.total;
  g.well_formed = res.format_score == 1.0;
  g.correct = !blocks.answers.empty() && rewards::exact_match_reward(blocks.answers.back(), ex.label) == 1.0;
  return g;
}

// ---------------------------------------------------------------------------

void RlConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("rl config: ") + what);
  };
  require(steps >= 0, "steps must be >= 0");
  require(group_size >= 2, "group_size must be >= 2");
  require(prompts_per_step >= 1, "prompts_per_step must be >= 1");
  require(lr > 0.0, "lr must be positive");
  require(clip_eps >= 0.0, "clip_eps must be >= 0");
  require(w_correct >= 0.0 && w_format >= 0.0, "reward weights must be >= 0");
  require(eval_prompts >= 1, "eval_prompts must be >= 1");
  require(window >= 1, "window must be >= 1");
  require(policy.max_len >= 1 && policy.hidden >= 1 && policy.blocks >= 1 && policy.ff >= 1,
          "bad policy shape");
  require(policy.temperature > 0.0, "temperature must be positive");
}

nlohmann::json to_json(const RlConfig& c) {
  return {{"task", to_string(c.task)},
          {"variant", to_string(c.variant)},
          {"steps", c.steps},
          {"group_size", c.group_size},
          {"prompts_per_step", c.prompts_per_step},
          {"lr", c.lr},
          {"clip_eps", c.clip_eps},
          {"w_correct", c.w_correct},
          {"w_format", c.w_format},
          {"eval_prompts", c.eval_prompts},
          {"window", c.window},
          {"seed", c.seed},
          {"policy",
           {{"hidden", c.policy.hidden},
            {"blocks", c.policy.blocks},
            {"ff", c.policy.ff},
            {"max_len", c.policy.max_len},
            {"temperature", c.policy.temperature},
            {"embed_std", c.policy.embed_std}}}};
}

RlConfig rl_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("rl config: expected a JSON object");
  RlConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "task") c.task = task_kind_from_string(v.get<std::string>());
    else if (key == "variant") c.variant = variant_from_string(v.get<std::string>());
    else if (key == "steps") c.steps = v.get<int>();
    else if (key == "group_size") c.group_size = v.get<int>();
    else if (key == "prompts_per_step") c.prompts_per_step = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "clip_eps") c.clip_eps = v.get<double>();
    else if (key == "w_correct") c.w_correct = v.get<double>();
    else if (key == "w_format") c.w_format = v.get<double>();
    else if (key == "eval_prompts") c.eval_prompts = v.get<int>();
    else if (key == "window") c.window = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "policy") {
      for (const auto& [pk, pv] : v.items()) {
        if (pk == "hidden") c.policy.hidden = pv.get<int>();
        else if (pk == "blocks") c.policy.blocks = pv.get<int>();
        else if (pk == "ff") c.policy.ff = pv.get<int>();
        else if (pk == "max_len") c.policy.max_len = pv.get<int>();
        else if (pk == "temperature") c.policy.temperature = pv.get<double>();
        else if (pk == "embed_std") c.policy.embed_std = pv.get<double>();
        else throw Error("rl config: unknown policy key '" + pk + "'");
      }
    } else {
      throw Error("rl config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

nlohmann::json RlStep::to_json() const {
  return {{"step", step},         {"mean_reward", mean_reward},   {"format_rate", format_rate},
          {"accuracy", accuracy}, {"kl", kl},                     {"clip_fraction", clip_fraction},
          {"grad_norm", grad_norm}, {"skipped", skipped}};
}

nlohmann::json RlEval::to_json() const {
  return {{"mean_reward", mean_reward}, {"format_rate", format_rate}, {"accuracy", accuracy}, {"prompts", prompts}};
}

namespace {

TaskExample weighted_task(const RlConfig& config, const tok::TokenizerModel& tokenizer, Rng& rng) {
  TaskExample ex = make_task(config.task, tokenizer, rng);
  ex.spec.w_correct = config.w_correct;
  ex.spec.w_format = config.w_format;
  return ex;
}

}  // namespace

RlEval evaluate_policy(const ToyPolicy& policy, const tok::TokenizerModel& tokenizer, const RlConfig& config,
                       std::uint64_t stream) {
  Rng rng = derive_rng(config.seed, {kEvalKey, stream});
  RlEval e;
  e.prompts = config.eval_prompts;
  for (int i = 0; i < config.eval_prompts; ++i) {
    const TaskExample ex = weighted_task(config, tokenizer, rng);
    const auto s = policy.sample(ex.prompt, rng);
    const Graded g = grade(policy.render(s.actions), ex);
    e.mean_reward += g.reward;
    e.format_rate += g.well_formed ? 1.0 : 0.0;
    e.accuracy += g.correct ? 1.0 : 0.0;
  }
  e.mean_reward /= double(config.eval_prompts);
  e.format_rate /= double(config.eval_prompts);
  e.accuracy /= double(config.eval_prompts);
  return e;
}

RlResult rl_demo(const tok::TokenizerModel& tokenizer, const RlConfig& config,
                 const std::function<void(const RlStep&)>& on_step) {
  config.validate();
  if (!tokenizer.ready()) throw Error("rl_demo: tokenizer codebooks are not initialized");
  if (tokenizer.config.levels + 1 != tok::kTokensPerPatch) throw Error("rl_demo: tokenizer must have 3 levels");

  Rng prng = derive_rng(config.seed, {kPolicyKey});
  ToyPolicy policy = ToyPolicy::create(config.policy, tokenizer, task_actions(config.task), prng);
  const ToyPolicy reference = policy;
  PolicyOptimizer opt{OptimizerKind::kAdam, config.lr, {}};

  RlResult result;
  result.max_reward = config.w_correct * (config.task == TaskKind::kClassify ? 1.0 : 2.0) + config.w_format;
  result.initial = evaluate_policy(policy, tokenizer, config, 0);

  for (int step = 1; step <= config.steps; ++step) {
    Rng rng = derive_rng(config.seed, {kStepKey, static_cast<std::uint64_t>(step)});
    std::vector<RolloutGroup> groups;
    RlStep rec;
    rec.step = step;
    for (int p = 0; p < config.prompts_per_step; ++p) {
      const TaskExample ex = weighted_task(config, tokenizer, rng);
      RolloutGroup g;
      g.prompt_id = std::to_string(step) + ":" + std::to_string(p);
      g.prompt = ex.prompt;
      for (int i = 0; i < config.group_size; ++i) {
        auto s = policy.sample(ex.prompt, rng);
        const Graded gr = grade(policy.render(s.actions), ex);
        g.completions.push_back(std::move(s.actions));
        g.old_logprobs.push_back(std::move(s.logprobs));
        g.rewards.push_back(gr.reward);
        rec.mean_reward += gr.reward;
        rec.format_rate += gr.well_formed ? 1.0 : 0.0;
        rec.accuracy += gr.correct ? 1.0 : 0.0;
      }
      g.compute_advantages(config.variant);
      groups.push_back(std::move(g));
    }
    const double n = double(config.prompts_per_step * config.group_size);
    rec.mean_reward /= n;
    rec.format_rate /= n;
    rec.accuracy /= n;

    const UpdateStats us = policy_gradient_step(policy, groups, opt, config.clip_eps);
    rec.clip_fraction = us.surrogate.clip_fraction;
    rec.grad_norm = us.grad_norm;
    rec.skipped = us.surrogate.skipped;
    rec.kl = kl_to(policy, reference, groups);
    result.curve.push_back(rec);
    if (on_step) on_step(rec);
  }

  for (std::size_t start = 0; start + static_cast<std::size_t>(config.window) <= result.curve.size();
       start += static_cast<std::size_t>(config.window)) {
    double s = 0.0;
    for (std::size_t i = start; i < start + static_cast<std::size_t>(config.window); ++i) s += result.curve[i].mean_reward;
    result.window_means.push_back(s / double(config.window));
  }
  result.final = evaluate_policy(policy, tokenizer, config, 0);
  return result;
}

}  // namespace counts::grpo
