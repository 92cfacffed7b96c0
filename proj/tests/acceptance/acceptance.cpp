// acceptance <criterion>: runs one acceptance check and prints a PASS/FAIL line.
// Exit status is 0 on PASS, 1 on FAIL, 2 on usage errors.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "counts/app.hpp"
#include "counts/grpo.hpp"
#include "counts/log.hpp"
#include "counts/nn.hpp"
#include "counts/rewards.hpp"
#include "counts/rvq.hpp"
#include "counts/tokenizer.hpp"
#include "counts/trainer.hpp"
#include "counts/ts_core.hpp"
#include "oracles.hpp"

using namespace counts;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kFdTol = 1e-4;
constexpr int kRvqQueries = 1000;
constexpr int kScalingPatches = 10000;
constexpr int kArityStreams = 1000;
constexpr double kMseImprovement = 10.0;
constexpr double kMaxSmape = 0.15;
constexpr double kMinUtilization = 60.0;  // percent, per level
constexpr double kSmapeExact = 1e-12;
constexpr int kAdvantageGroups = 1000;
constexpr double kAdvantageTol = 1e-9;
constexpr double kRlAccuracy = 0.9;
constexpr int kRlMaxSteps = 500;
constexpr int kRlWindow = 50;
constexpr double kRlMonotoneSlack = 0.02;  // reward units a window mean may dip below its predecessor

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("violated: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(double v, const char* f = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path work_dir() {
  const char* env = std::getenv("COUNTS_ACCEPTANCE_DIR");
  return env && *env ? fs::path(env) : fs::current_path() / "acceptance_runs";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

using Td = nn::Tensor<double>;

Td randn(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Td t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = n(rng);
  return t;
}

tok::TokenizerModel toy_tokenizer(int embed_dim, int codebook_size, std::uint64_t seed) {
  tok::TokenizerConfig c;
  c.hidden = 8;
  c.ff = 8;
  c.blocks = 1;
  c.embed_dim = embed_dim;
  c.codebook_size = codebook_size;
  Rng rng(seed);
  auto m = tok::TokenizerModel::create(c, rng);
  rvq::random_init(m.rvq, rvq::Matrix::Random(256, embed_dim), rng);
  return m;
}

// ---------------------------------------------------------------------------

double mlp_fd(const nn::MlpConfig& cfg, Rng& rng) {
  auto net = nn::Mlp<double>::init(cfg, rng);
  net.visit([&](const std::string&, Td& t) { t += randn(t.rows(), t.cols(), rng, 0.05); });
  Td x = randn(3, cfg.input, rng);
  const Td w = randn(3, cfg.output, rng);
  auto grads = net.zeros_like();
  nn::Mlp<double>::Cache cache;
  net.forward(x, cache);
  const Td gx = net.backward(cache, w, grads);
  auto f = [&] { return (net.forward(x).array() * w.array()).sum(); };
  double worst = oracle::worst_fd_error(f, x, gx);
  std::vector<Td*> ps;
  net.visit([&](const std::string&, Td& t) { ps.push_back(&t); });
  const auto gs = grads.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) worst = std::max(worst, oracle::worst_fd_error(f, *ps[i], *gs[i]));
  return worst;
}

Outcome check_gradients() {
  Outcome o;
  Rng rng(101);
  std::map<std::string, double> worst;

  {
    Td h = randn(5, 8, rng);
    const Td w = randn(5, 4, rng);
    const Td g = nn::swiglu_backward(h, w);
    worst["swiglu"] = oracle::worst_fd_error([&] { return (nn::swiglu(h).array() * w.array()).sum(); }, h, g);
  }
  {
    Td x = randn(4, 6, rng);
    Td gain = randn(1, 6, rng);
    const Td w = randn(4, 6, rng);
    nn::Column<double> inv;
    nn::rmsnorm(x, gain, &inv);
    Td gg = Td::Zero(1, 6);
    const Td gx = nn::rmsnorm_backward(x, gain, inv, w, &gg);
    auto f = [&] { return (nn::rmsnorm(x, gain).array() * w.array()).sum(); };
    worst["rmsnorm"] = std::max(oracle::worst_fd_error(f, x, gx), oracle::worst_fd_error(f, gain, gg));
  }
  {
    tok::TokenizerConfig toy;
    toy.hidden = 16;
    toy.ff = 12;
    toy.blocks = 3;
    toy.embed_dim = 8;
    worst["encoder"] = mlp_fd(toy.encoder(), rng);
    worst["decoder"] = mlp_fd(toy.decoder(), rng);
  }
  {
    const auto tk = toy_tokenizer(4, 8, 102);
    grpo::PolicyConfig pc;
    pc.hidden = 6;
    pc.blocks = 1;
    pc.ff = 5;
    pc.max_len = 3;
    Rng prng(103);
    auto policy = grpo::ToyPolicy::create(pc, tk, {"a", "b", "<eos>"}, prng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<grpo::RolloutGroup> groups;
    for (int gi = 0; gi < 3; ++gi) {
      grpo::RolloutGroup g;
      g.prompt = {gi + 1, 40, 50 + gi};
      for (int i = 0; i < 4; ++i) {
        auto s = policy.sample(g.prompt, prng);
        if (s.actions.empty()) continue;
        for (auto& lp : s.logprobs) lp += 0.05 * n(prng);
        g.completions.push_back(s.actions);
        g.old_logprobs.push_back(s.logprobs);
        g.rewards.push_back(n(prng));
      }
      if (g.completions.size() < 2) continue;
      g.compute_advantages(grpo::Variant::kGrpo);
      groups.push_back(std::move(g));
    }
    auto grad = policy.zeros_like();
    grpo::surrogate(policy, groups, 0.2, &grad);
    auto f = [&] { return grpo::surrogate(policy, groups, 0.2).objective; };
    auto ps = policy.parameters();
    auto gs = grad.parameters();
    double w = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) w = std::max(w, oracle::worst_fd_error(f, *ps[i], *gs[i]));
    worst["grpo_surrogate"] = w;
  }
  for (const auto& [name, err] : worst) {
    o.note(name + " " + fmt(err, "%.2e"));
    o.require(err < kFdTol, name + " rel err < " + fmt(kFdTol));
  }
  o.note("tol " + fmt(kFdTol));
  return o;
}

Outcome check_rvq_exactness() {
  Outcome o;
  Rng rng(201);
  rvq::ResidualQuantizer q(rvq::kDefaultLevels, rvq::kDefaultCodebookSize, rvq::kDefaultDim);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int l = 0; l < q.levels(); ++l) {
    auto& b = q.codebooks()[static_cast<std::size_t>(l)];
    for (Eigen::Index i = 0; i < b.vectors.size(); ++i) b.vectors.data()[i] = static_cast<float>(std::pow(0.4, l) * n(rng));
    b.reset_stats();
    b.initialized = true;
  }
  rvq::Matrix x(kRvqQueries, rvq::kDefaultDim);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(n(rng));
  // Some queries sit near a code so the top candidates are close.
  for (int i = 0; i < kRvqQueries / 4; ++i) {
    x.row(i) = q.codebooks()[0].vectors.row(i) + x.row(i) * 1e-3f;
  }
  const auto bc = q.quantize(x);
  int mismatches = 0;
  for (int i = 0; i < kRvqQueries; ++i) {
    std::vector<float> r(x.row(i).data(), x.row(i).data() + rvq::kDefaultDim);
    for (int l = 0; l < q.levels(); ++l) {
      const auto& codes = q.codebooks()[static_cast<std::size_t>(l)].vectors;
      const int want = oracle::brute_nearest(r, codes);
      if (bc.index(i, l) != want) ++mismatches;
      for (int j = 0; j < rvq::kDefaultDim; ++j) r[static_cast<std::size_t>(j)] -= codes(want, j);
    }
  }
  o.note(std::to_string(mismatches) + " mismatches over " + std::to_string(kRvqQueries) + " x " +
         std::to_string(q.levels()) + " levels (" + std::to_string(rvq::kDefaultCodebookSize) + " codes x " +
         std::to_string(rvq::kDefaultDim) + ")");
  o.require(mismatches == 0, "zero mismatches");
  return o;
}

Outcome check_scaling() {
  Outcome o;
  std::mt19937_64 rng(301);
  std::uniform_real_distribution<double> expo(-40.0, 60.0);
  std::normal_distribution<double> n(0.0, 1.0);
  int normal_patches = 0, range_bad = 0, roundtrip_bad = 0, clip_bad = 0, zero_patches = 0;
  const double lo = std::sqrt(0.5), hi = std::sqrt(2.0);
  for (int t = 0; t < kScalingPatches; ++t) {
    std::vector<double> x(ts::kPatchLength);
    const double s = std::exp2(expo(rng));
    if (t % 500 == 0) {
      std::fill(x.begin(), x.end(), 0.0);
      ++zero_patches;
    } else {
      for (auto& v : x) v = n(rng) * s;
    }
    const ts::Patch p = ts::make_patch(x);
    double peak = 0.0, speak = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      peak = std::max(peak, std::abs(x[i]));
      speak = std::max(speak, std::abs(p.scaled[i]));
    }
    if (p.scale_exp < ts::kMinScaleExp || p.scale_exp > ts::kMaxScaleExp) ++clip_bad;
    if (peak > std::ldexp(hi, ts::kMaxScaleExp) && p.scale_exp != ts::kMaxScaleExp) ++clip_bad;
    if (peak < std::ldexp(lo, ts::kMinScaleExp) && p.scale_exp != ts::kMinScaleExp) ++clip_bad;
    if (peak > 0.0 && p.scale_exp > ts::kMinScaleExp && p.scale_exp < ts::kMaxScaleExp) {
      ++normal_patches;
      if (!(speak >= lo && speak < hi)) ++range_bad;
    }
    const auto back = ts::unscale(p.scaled, p.scale_exp);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (back[i] != x[i]) {
        ++roundtrip_bad;
        break;
      }
    }
  }
  o.note(std::to_string(kScalingPatches) + " patches, " + std::to_string(normal_patches) + " non-clipped, " +
         std::to_string(zero_patches) + " all-zero");
  o.note("range violations " + std::to_string(range_bad) + ", round-trip failures " + std::to_string(roundtrip_bad) +
         ", clip violations " + std::to_string(clip_bad));
  o.require(range_bad == 0, "max|scaled| in [2^-0.5, 2^0.5)");
  o.require(roundtrip_bad == 0, "bit-exact unscale(apply_scale(x))");
  o.require(clip_bad == 0, "exponent clipped to [-10, 36]");
  return o;
}

Outcome check_token_arity() {
  Outcome o;
  // Shipped architecture with randomly initialised codebooks: arity does not
  // depend on training.
  Rng rng(401);
  auto model = tok::TokenizerModel::create(tok::TokenizerConfig{}, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> expo(-15.0, 40.0);
  {
    rvq::Matrix sample(4096, static_cast<Eigen::Index>(ts::kPatchLength));
    for (Eigen::Index i = 0; i < sample.size(); ++i) sample.data()[i] = static_cast<float>(n(rng));
    rvq::random_init(model.rvq, model.encoder.forward(sample), rng);
  }
  const tok::Vocab vocab = model.vocab();
  int patches = 0, bad = 0;
  std::uniform_int_distribution<int> len(1, 700);
  for (int s = 0; s < 100; ++s) {
    ts::Series series{"s", std::vector<double>(static_cast<std::size_t>(len(rng))), {}};
    const double scale = std::exp2(expo(rng));
    for (auto& v : series.values) v = scale * n(rng);
    const auto stream = tok::encode(series, model);
    const auto expected = ts::patchify(series);
    if (stream.tokens.size() != tok::kTokensPerPatch * expected.size()) ++bad;
    for (std::size_t p = 0; p < stream.patch_count(); ++p) {
      ++patches;
      const auto t0 = vocab.info(stream.tokens[4 * p]);
      bool ok = t0.kind == tok::TokenKind::kScale && t0.value == expected[p].scale_exp;
      for (int l = 0; l < 3; ++l) {
        const auto t = vocab.info(stream.tokens[4 * p + 1 + static_cast<std::size_t>(l)]);
        ok = ok && t.kind == tok::TokenKind::kSeries && t.level == l;
      }
      if (!ok) ++bad;
    }
  }
  o.note(std::to_string(patches) + " encoded patches, " + std::to_string(bad) + " not [scale, l0, l1, l2]");
  o.require(bad == 0, "exactly 4 tokens per patch, scale first");

  // Random valid streams: render then parse is the identity and distinct
  // streams render to distinct texts.
  int roundtrip_bad = 0;
  std::set<std::string> texts;
  std::uniform_int_distribution<int> scale_tok(0, ts::kNumScaleExps - 1);
  std::uniform_int_distribution<int> code(0, vocab.codebook_size() - 1);
  std::uniform_int_distribution<int> length(1, 640);
  for (int i = 0; i < kArityStreams; ++i) {
    tok::TokenStream s;
    s.header.length = static_cast<std::uint64_t>(length(rng));
    s.header.pad = static_cast<std::uint32_t>(ts::pad_count(s.header.length));
    for (std::size_t p = 0; p < ts::patch_count(s.header.length); ++p) {
      s.tokens.push_back(scale_tok(rng));
      for (int l = 0; l < 3; ++l) s.tokens.push_back(vocab.series_token(l, code(rng)));
    }
    const std::string text = tok::render_text(s, vocab);
    const auto back = tok::parse_text(text, vocab);
    if (!(back == s) || tok::render_text(back, vocab) != text) ++roundtrip_bad;
    texts.insert(text);
  }
  o.note(std::to_string(kArityStreams) + " random streams, " + std::to_string(roundtrip_bad) +
         " round-trip failures, " + std::to_string(texts.size()) + " distinct texts");
  o.require(roundtrip_bad == 0, "parse(render(s)) == s");
  o.require(static_cast<int>(texts.size()) == kArityStreams, "distinct streams render distinctly");
  return o;
}

json run_stage(const std::string& sub, const json& overrides, const fs::path& out) {
  const json cfg = app::resolve(sub, json(), overrides);
  return app::run(sub, cfg, out);
}

Outcome check_training() {
  Outcome o;
  const auto root = work_dir() / "training";
  fs::remove_all(root);
  const auto t0 = std::chrono::steady_clock::now();
  const json on = run_stage("train", json::object(), root / "expire_on");
  const json off = run_stage("train", {{"train", {{"expire_dead_codes", false}}}}, root / "expire_off");
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;

  const double improvement = on.at("mse_improvement").get<double>();
  const double smape = on.at("best").at("smape").get<double>();
  const auto& util_on = on.at("best").at("utilization");
  const auto& util_off = off.at("best").at("utilization");
  o.note("val mse " + fmt(on.at("baseline").at("recon_mse").get<double>()) + " -> " +
         fmt(on.at("best").at("recon_mse").get<double>()) + " (x" + fmt(improvement, "%.3g") + ", need >= " +
         fmt(kMseImprovement) + ")");
  o.note("smape " + fmt(smape) + " (need <= " + fmt(kMaxSmape) + ")");
  o.require(improvement >= kMseImprovement, "mse improvement >= 10x");
  o.require(smape <= kMaxSmape, "mean per-patch smape <= 0.15");
  std::string u = "utilization on/off %:";
  for (std::size_t l = 0; l < util_on.size(); ++l) {
    const double a = util_on[l].get<double>(), b = util_off[l].get<double>();
    u += " L" + std::to_string(l) + " " + fmt(a, "%.1f") + "/" + fmt(b, "%.1f");
    o.require(a >= kMinUtilization, "level " + std::to_string(l) + " utilization >= 60%");
    o.require(a > b, "level " + std::to_string(l) + " utilization above the no-expiry run");
  }
  o.note(u);
  o.note("wall " + fmt(minutes, "%.1f") + " min for both runs");
  return o;
}

Outcome check_rewards() {
  Outcome o;
  using namespace counts::rewards;
  const std::vector<double> one = {1.0};
  const double s0 = smape(std::vector<double>{2.5, -1.0}, std::vector<double>{2.5, -1.0});
  const double s1 = smape(one, std::vector<double>{3.0});
  const double s2 = smape(one, std::vector<double>{-1.0});
  o.note("smape cases " + fmt(s0, "%.17g") + ", " + fmt(s1, "%.17g") + ", " + fmt(s2, "%.17g"));
  o.require(std::abs(s0) <= kSmapeExact && std::abs(s1 - 1.0) <= kSmapeExact && std::abs(s2 - 2.0) <= kSmapeExact,
            "smape examples 0 / 1.0 / 2.0 within 1e-12");

  std::mt19937_64 rng(601);
  std::normal_distribution<double> n(0.0, 3.0);
  int identity_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> y(1 + t % 12), f(y.size());
    std::string text;
    for (std::size_t i = 0; i < y.size(); ++i) {
      y[i] = n(rng);
      f[i] = n(rng);
      text += fmt(f[i], "%.17g") + (i + 1 < y.size() ? ", " : "");
    }
    const auto r = forecast_reward(text, y);
    if (!r.parsed || r.reward != 2.0 - smape(y, f)) ++identity_bad;
  }
  o.note(std::to_string(identity_bad) + "/1000 forecast_reward != 2 - smape");
  o.require(identity_bad == 0, "forecast_reward = 2 - smape when parsing succeeds");

  const std::vector<std::pair<std::string, double>> schedule = {
      {"<think>t</think><answer>a</answer>", 1.0},
      {"<answer>a</answer>", 0.5},
      {"<think>t</think>", 0.25},
      {"<answer>a</answer><answer>b</answer>", 0.25},
      {"no tags", 0.0}};
  bool sched_ok = true;
  for (const auto& [text, want] : schedule) sched_ok = sched_ok && format_reward(parse_blocks(text)) == want;
  o.require(sched_ok, "format schedule 1 / 0.5 / 0.25 / 0 exact");

  const double em = exact_match_reward("(36) subendocardial injury in inferolateral leads",
                                       "subendocardial injury in inferolateral leads");
  const double em2 = exact_match_reward(" Long QT-interval ", "long qt-interval");
  const double em3 = exact_match_reward("none", "long qt-interval");
  o.require(em == 1.0 && em2 == 1.0 && em3 == 0.0, "exact-match normalization cases");
  o.note("format schedule " + std::string(sched_ok ? "exact" : "wrong") + ", appendix match " + fmt(em));
  return o;
}

Outcome check_advantages() {
  Outcome o;
  std::mt19937_64 rng(701);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> gsize(2, 16);
  double worst_rel = 0.0, worst_mean = 0.0;
  for (int t = 0; t < kAdvantageGroups; ++t) {
    std::vector<double> r(static_cast<std::size_t>(gsize(rng)));
    const double scale = std::exp(n(rng));
    for (auto& x : r) x = scale * n(rng);
    if (t % 100 == 0) std::fill(r.begin(), r.end(), 0.5);
    const auto a = grpo::advantages(r, grpo::Variant::kGrpo);
    const auto b = grpo::advantages(r, grpo::Variant::kDapo);
    const double sd = grpo::population_std(r);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      worst_rel = std::max(worst_rel, std::abs(a[i] * (sd + grpo::kAdvantageEps) - b[i]));
      ma += a[i];
      mb += b[i];
    }
    worst_mean = std::max({worst_mean, std::abs(ma / double(r.size())), std::abs(mb / double(r.size()))});
  }
  o.note("max |grpo*(std+eps) - dapo| " + fmt(worst_rel, "%.2e") + ", max |group mean| " + fmt(worst_mean, "%.2e"));
  o.require(worst_rel <= kAdvantageTol, "dapo = grpo * (std + eps)");
  o.require(worst_mean <= kAdvantageTol, "mean-zero advantages");

  // Reward shift invariance of a full policy update.
  const auto tk = toy_tokenizer(4, 8, 702);
  grpo::PolicyConfig pc;
  pc.hidden = 8;
  pc.ff = 8;
  pc.max_len = 4;
  Rng prng(703);
  const auto base = grpo::ToyPolicy::create(pc, tk, {"x", "y", "z", "<eos>"}, prng);
  double worst_update = 0.0;
  for (grpo::Variant v : {grpo::Variant::kGrpo, grpo::Variant::kDapo}) {
    std::vector<grpo::RolloutGroup> groups, shifted;
    for (int gi = 0; gi < 4; ++gi) {
      grpo::RolloutGroup g;
      g.prompt = {gi + 2, 47 + gi};
      for (int i = 0; i < 8; ++i) {
        auto s = base.sample(g.prompt, prng);
        g.completions.push_back(s.actions);
        g.old_logprobs.push_back(s.logprobs);
        g.rewards.push_back(n(rng));
      }
      g.compute_advantages(v);
      auto h = g;
      for (auto& x : h.rewards) x += 7.5;
      h.compute_advantages(v);
      groups.push_back(std::move(g));
      shifted.push_back(std::move(h));
    }
    auto p1 = base, p2 = base;
    grpo::PolicyOptimizer o1{grpo::OptimizerKind::kSgd, 0.1, {}}, o2{grpo::OptimizerKind::kSgd, 0.1, {}};
    grpo::policy_gradient_step(p1, groups, o1, 0.2);
    grpo::policy_gradient_step(p2, shifted, o2, 0.2);
    auto a = p1.parameters(), b = p2.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) worst_update = std::max(worst_update, (*a[i] - *b[i]).cwiseAbs().maxCoeff());
  }
  o.note("max parameter difference after shifted-reward update " + fmt(worst_update, "%.2e"));
  o.require(worst_update <= kAdvantageTol, "reward-shift invariant update");
  o.note("tol " + fmt(kAdvantageTol));
  return o;
}

Outcome check_rl_demo() {
  Outcome o;
  const auto root = work_dir() / "rl_demo";
  fs::remove_all(root);
  const auto t0 = std::chrono::steady_clock::now();
  for (const char* variant : {"grpo", "dapo"}) {
    const json s = run_stage("rl-demo", {{"rl", {{"variant", variant}, {"steps", kRlMaxSteps}, {"window", kRlWindow}}}},
                             root / variant);
    const double acc = s.at("final").at("accuracy").get<double>();
    const auto wm = s.at("window_means").get<std::vector<double>>();
    double worst_dip = 0.0;
    for (std::size_t i = 1; i < wm.size(); ++i) worst_dip = std::max(worst_dip, wm[i - 1] - wm[i]);
    std::string curve;
    for (double w : wm) curve += (curve.empty() ? "" : " ") + fmt(w, "%.3f");
    o.note(std::string(variant) + ": accuracy " + fmt(s.at("initial").at("accuracy").get<double>(), "%.3f") + " -> " +
           fmt(acc, "%.3f") + ", window means [" + curve + "], worst dip " + fmt(worst_dip, "%.3f"));
    o.require(acc >= kRlAccuracy, std::string(variant) + " accuracy >= 0.9");
    o.require(worst_dip <= kRlMonotoneSlack, std::string(variant) + " window means non-decreasing (slack 0.02)");
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  o.note("wall " + fmt(minutes, "%.1f") + " min");
  return o;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(COUNTS_CLI_PATH) + " " + args + " -q >/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome check_determinism() {
  Outcome o;
  const auto root = work_dir() / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "train.json") << R"({
      "synth_n": 60,
      "train": {"epochs": 2, "batch_size": 64, "warmup_steps": 5, "kmeans_samples": 1024, "kmeans_iters": 5,
                "model": {"hidden": 32, "ff": 32, "blocks": 2, "embed_dim": 16, "levels": 3, "codebook_size": 64}}
    })";
    std::ofstream(root / "rl.json") << R"({"rl": {"steps": 20, "eval_prompts": 32, "window": 10}})";
  }
  struct Stage {
    std::string name, args;
    std::vector<std::string> files;
  };
  const auto first = [&](const std::string& n) { return (root / n / "a").string(); };
  const std::vector<Stage> stages = {
      {"synth", "synth -n 20 --seed 5", {"corpus.jsonl", "metrics.json"}},
      {"train", "train -c " + (root / "train.json").string() + " --seed 5",
       {"metrics.jsonl", "metrics.csv", "summary.json"}},
      {"encode", "encode -m " + first("train") + "/model.ckpt -i " + first("synth") + "/corpus.jsonl",
       {"tokens.jsonl", "tokens.ctsf", "metrics.json"}},
      {"decode", "decode -m " + first("train") + "/model.ckpt -i " + first("encode") + "/tokens.ctsf",
       {"decoded.jsonl", "metrics.json"}},
      {"eval-recon", "eval-recon -m " + first("train") + "/model.ckpt -i " + first("synth") + "/corpus.jsonl",
       {"metrics.json"}},
      {"score", "score --completion '<think>x</think><answer>1, 2</answer>' --task forecast --target 1,3",
       {"scores.jsonl", "metrics.json"}},
      {"rl-demo", "rl-demo -c " + (root / "rl.json").string() + " --seed 5",
       {"curve.csv", "curve.jsonl", "summary.json"}},
  };
  int compared = 0, differing = 0;
  for (const auto& st : stages) {
    const auto a = root / st.name / "a", b = root / st.name / "b";
    if (run_cli(st.args + " -o " + a.string()) != 0) {
      o.require(false, st.name + " first run succeeds");
      continue;
    }
    if (run_cli(st.name + " --from-manifest " + (a / "manifest.json").string() + " -o " + b.string()) != 0) {
      o.require(false, st.name + " manifest re-run succeeds");
      continue;
    }
    for (const auto& f : st.files) {
      ++compared;
      const auto x = slurp(a / f), y = slurp(b / f);
      if (x.empty() || x != y) {
        ++differing;
        o.require(false, st.name + "/" + f + " byte-identical");
      }
    }
  }
  o.note(std::to_string(stages.size()) + " stages, " + std::to_string(compared) + " artifacts compared, " +
         std::to_string(differing) + " differ");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<std::string, std::function<Outcome()>> checks = {
      {"gradients", check_gradients},     {"rvq_exactness", check_rvq_exactness},
      {"scaling", check_scaling},         {"token_arity", check_token_arity},
      {"training", check_training},       {"rewards", check_rewards},
      {"advantages", check_advantages},   {"rl_demo", check_rl_demo},
      {"determinism", check_determinism}};
  if (argc != 2 || (!checks.count(argv[1]) && std::string(argv[1]) != "all")) {
    std::cerr << "usage: acceptance <criterion|all>\ncriteria:";
    for (const auto& [name, _] : checks) std::cerr << ' ' << name;
    std::cerr << '\n';
    return 2;
  }
  log::level() = log::Level::kWarn;
  const std::string which = argv[1];
  bool all_pass = true;
  for (const auto& [name, fn] : checks) {
    if (which != "all" && which != name) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
