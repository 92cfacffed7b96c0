#include "counts/app.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "counts/checkpoint.hpp"
#include "counts/corpus.hpp"
#include "counts/error.hpp"
#include "counts/grpo.hpp"
#include "counts/log.hpp"
#include "counts/rewards.hpp"
#include "counts/tokenizer.hpp"
#include "counts/trainer.hpp"

namespace counts::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json without_seed(json j) {
  j.erase("seed");
  return j;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error("write failed: '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string require_path(const json& c, const char* key) {
  const auto s = c.value(key, std::string());
  if (s.empty()) throw Error(std::string("missing required setting '") + key + "'");
  return s;
}

corpus::Format input_format(const json& c, const fs::path& input) {
  const auto f = c.value("format", std::string("auto"));
  return f == "auto" ? corpus::format_from_path(input) : corpus::format_from_string(f);
}

corpus::NanPolicy nan_policy(const json& c) {
  const auto p = c.value("nan_policy", std::string("interpolate"));
  if (p == "interpolate") return corpus::NanPolicy::kInterpolate;
  if (p == "drop") return corpus::NanPolicy::kDrop;
  throw Error("unknown nan_policy '" + p + "'");
}

std::vector<ts::Series> load_series(const json& c) {
  const fs::path input = require_path(c, "input");
  return corpus::ingest(input, input_format(c, input), nan_policy(c));
}

corpus::GeneratorSpec generator(const json& c) {
  corpus::GeneratorSpec g = corpus::generator_spec_from_json(c.at("generator"));
  g.seed = c.at("seed").get<std::uint64_t>();
  g.validate();
  return g;
}

train::TrainConfig train_config(const json& c) {
  json t = c.at("train");
  t["seed"] = c.at("seed");
  return train::train_config_from_json(t);
}

// ---------------------------------------------------------------------------

json run_synth(const json& c, const fs::path& out) {
  const auto spec = generator(c);
  const auto n = c.at("n").get<std::int64_t>();
  if (n < 0) throw Error("synth: n must be >= 0");
  const auto series = corpus::generate(spec, static_cast<std::size_t>(n));
  const auto name = c.at("output").get<std::string>();
  corpus::write_jsonl(out / name, series);
  std::size_t samples = 0;
  for (const auto& s : series) samples += s.values.size();
  const json summary = {{"series", series.size()}, {"samples", samples}, {"output", name}};
  write_json(out / "metrics.json", summary);
  return summary;
}

std::pair<std::vector<ts::Series>, std::vector<ts::Series>> train_split(const json& c) {
  std::vector<ts::Series> all;
  const auto corpus_path = c.value("corpus", std::string());
  if (corpus_path.empty()) {
    all = corpus::generate(generator(c), c.at("synth_n").get<std::size_t>());
  } else {
    json in = c;
    in["input"] = corpus_path;
    all = load_series(in);
  }
  const double val_ratio = c.at("val_ratio").get<double>();
  if (!(val_ratio > 0.0 && val_ratio < 1.0)) throw Error("val_ratio must be in (0, 1)");
  auto sp = corpus::split(all, 1.0 - val_ratio, c.at("seed").get<std::uint64_t>());
  if (sp.train.empty() || sp.val.empty()) throw Error("corpus too small to split into train and validation");
  return {std::move(sp.train), std::move(sp.val)};
}

json run_train(const json& c, const fs::path& out) {
  const auto cfg = train_config(c);
  auto [train_set, val_set] = train_split(c);
  log::info("training on " + std::to_string(train_set.size()) + " series, validating on " +
            std::to_string(val_set.size()));
  auto model = train::initial_model(cfg);
  train::FitOptions opt;
  opt.out_dir = out;
  opt.resume = c.at("resume").get<bool>();
  const auto r = train::fit(model, train_set, val_set, cfg, opt);
  if (fs::exists(out / "best.ckpt")) fs::copy_file(out / "best.ckpt", out / "model.ckpt", fs::copy_options::overwrite_existing);
  else tok::save_model(out / "model.ckpt", model);
  json summary = {{"baseline", r.baseline.to_json()},
                  {"best_epoch", r.best_epoch},
                  {"best", r.best_epoch > 0 ? r.best.to_json() : json()},
                  {"epochs", r.history.size()},
                  {"model", "model.ckpt"}};
  if (r.best_epoch > 0) summary["mse_improvement"] = r.baseline.recon_mse / r.best.recon_mse;
  write_json(out / "summary.json", summary);
  return summary;
}

json run_encode(const json& c, const fs::path& out) {
  const auto model = tok::load_model(require_path(c, "model"));
  const auto series = load_series(c);
  const auto vocab = model.vocab();
  std::vector<tok::NamedStream> streams;
  std::ostringstream lines;
  std::size_t patches = 0;
  for (const auto& s : series) {
    auto stream = tok::encode(s, model);
    patches += stream.patch_count();
    lines << json{{"id", s.id},
                  {"length", stream.header.length},
                  {"pad", stream.header.pad},
                  {"tokens", stream.tokens},
                  {"text", tok::render_text(stream, vocab)}}
                 .dump()
          << '\n';
    streams.push_back({s.id, std::move(stream)});
  }
  tok::write_stream_file(out / "tokens.ctsf", streams);
  write_text(out / "tokens.jsonl", lines.str());
  const json summary = {{"series", series.size()}, {"patches", patches}, {"tokens", patches * tok::kTokensPerPatch}};
  write_json(out / "metrics.json", summary);
  return summary;
}

std::vector<tok::NamedStream> read_streams(const fs::path& input, const tok::Vocab& vocab) {
  if (input.extension() != ".jsonl") return tok::read_stream_file(input);
  std::ifstream in(input);
  if (!in) throw Error("cannot open '" + input.string() + "'");
  std::vector<tok::NamedStream> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      tok::NamedStream ns;
      ns.id = j.value("id", std::to_string(lineno));
      if (j.contains("text")) {
        ns.stream = tok::parse_text(j.at("text").get<std::string>(), vocab);
      } else {
        ns.stream.header.length = j.at("length").get<std::uint64_t>();
        ns.stream.header.pad = j.at("pad").get<std::uint32_t>();
        ns.stream.tokens = j.at("tokens").get<std::vector<std::int32_t>>();
      }
      out.push_back(std::move(ns));
    } catch (const json::exception& e) {
      throw ParseError(input.string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

json run_decode(const json& c, const fs::path& out) {
  const auto model = tok::load_model(require_path(c, "model"));
  const auto streams = read_streams(require_path(c, "input"), model.vocab());
  std::vector<ts::Series> series;
  std::size_t samples = 0;
  for (const auto& ns : streams) {
    ts::Series s;
    s.id = ns.id;
    s.values = tok::decode(ns.stream, model);
    samples += s.values.size();
    series.push_back(std::move(s));
  }
  corpus::write_jsonl(out / "decoded.jsonl", series);
  const json summary = {{"series", series.size()}, {"samples", samples}};
  write_json(out / "metrics.json", summary);
  return summary;
}

json run_eval_recon(const json& c, const fs::path& out) {
  auto model = tok::load_model(require_path(c, "model"));
  const auto series = load_series(c);
  const auto patches = train::eval_patches(series);
  if (!model.ready()) {
    log::warn("checkpoint has uninitialised codebooks; using random codes matched to the embeddings");
    std::vector<ts::Patch> raw;
    for (const auto& p : patches) raw.push_back(p.patch);
    const auto batch = tok::to_batch(raw);
    Rng rng = derive_rng(c.at("seed").get<std::uint64_t>(), {0x657661ULL});
    rvq::random_init(model.rvq, model.encoder.forward(batch.scaled), rng);
  }
  const auto m = train::evaluate(model, patches);
  json summary = m.to_json();
  summary["series"] = series.size();
  write_json(out / "metrics.json", summary);
  return summary;
}

rewards::RewardSpec reward_spec(const json& j, const json& defaults) {
  auto get = [&](const char* key) -> const json& { return j.contains(key) ? j.at(key) : defaults.at(key); };
  rewards::RewardSpec spec;
  spec.task = rewards::task_from_string(get("task").get<std::string>());
  spec.w_correct = get("w_correct").get<double>();
  spec.w_format = get("w_format").get<double>();
  if (spec.task == rewards::Task::kMatch) {
    spec.label = get("label").get<std::string>();
  } else {
    spec.horizon = get("target").get<std::vector<double>>();
  }
  return spec;
}

json run_score(const json& c, const fs::path& out) {
  std::vector<json> items;
  const auto input = c.value("input", std::string());
  if (!input.empty()) {
    std::ifstream in(input);
    if (!in) throw Error("cannot open '" + input + "'");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        items.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw ParseError(input + ": " + e.what(), lineno);
      }
    }
  } else {
    items.push_back({{"completion", c.at("completion")}});
  }

  std::optional<tok::TokenizerModel> model;
  rewards::StreamDecoder decoder;
  const auto model_path = c.value("model", std::string());
  if (!model_path.empty()) {
    model = tok::load_model(model_path);
    decoder = [&](const tok::TokenStream& s) { return tok::decode(s, *model); };
  }
  const tok::Vocab vocab = model ? model->vocab() : tok::Vocab();

  std::ostringstream lines;
  double total = 0.0, fmt = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (!it.contains("completion")) throw ParseError("score input: record has no 'completion'", i + 1);
    const auto spec = reward_spec(it, c);
    const auto r = rewards::score(it.at("completion").get<std::string>(), spec, model ? &vocab : nullptr,
                                  model ? &decoder : nullptr);
    lines << json{{"index", i},
                  {"format", r.format_score},
                  {"correctness", r.correctness},
                  {"total", r.total},
                  {"diagnostics", r.diagnostics}}
                 .dump()
          << '\n';
    total += r.total;
    fmt += r.format_score;
    correct += r.correctness;
  }
  write_text(out / "scores.jsonl", lines.str());
  const double n = double(items.size());
  json summary = {{"completions", items.size()},
                  {"mean_total", total / n},
                  {"mean_format", fmt / n},
                  {"mean_correctness", correct / n}};
  write_json(out / "metrics.json", summary);
  return summary;
}

json run_rl_demo(const json& c, const fs::path& out) {
  tok::TokenizerModel tokenizer;
  const auto tok_path = c.value("tokenizer", std::string());
  if (!tok_path.empty()) {
    tokenizer = tok::load_model(tok_path);
  } else {
    const json& tt = c.at("tokenizer_train");
    json sub = {{"seed", c.at("seed")},
                {"generator", tt.at("generator")},
                {"synth_n", tt.at("synth_n")},
                {"val_ratio", tt.at("val_ratio")},
                {"train", tt.at("train")}};
    const auto cfg = train_config(sub);
    auto [tr, va] = train_split(sub);
    log::info("training a small tokenizer for the demo");
    tokenizer = train::initial_model(cfg);
    const auto level = log::level();
    log::level() = std::min(level, log::Level::kWarn);
    train::fit(tokenizer, tr, va, cfg);
    log::level() = level;
    tok::save_model(out / "tokenizer.ckpt", tokenizer);
  }

  json rl = c.at("rl");
  rl["seed"] = c.at("seed");
  const auto cfg = grpo::rl_config_from_json(rl);
  std::ostringstream csv, jl;
  csv << "step,mean_reward,format_rate,accuracy,kl,clip_fraction,grad_norm,skipped\n";
  const auto r = grpo::rl_demo(tokenizer, cfg, [&](const grpo::RlStep& s) {
    csv << s.step << ',' << num(s.mean_reward) << ',' << num(s.format_rate) << ',' << num(s.accuracy) << ','
        << num(s.kl) << ',' << num(s.clip_fraction) << ',' << num(s.grad_norm) << ',' << s.skipped << '\n';
    jl << s.to_json().dump() << '\n';
    if (s.step % cfg.window == 0) {
      log::info("rl step " + std::to_string(s.step) + " reward " + num(s.mean_reward) + " accuracy " +
                num(s.accuracy));
    }
  });
  write_text(out / "curve.csv", csv.str());
  write_text(out / "curve.jsonl", jl.str());
  const json summary = {{"task", grpo::to_string(cfg.task)},
                        {"variant", grpo::to_string(cfg.variant)},
                        {"steps", cfg.steps},
                        {"initial", r.initial.to_json()},
                        {"final", r.final.to_json()},
                        {"window_means", r.window_means},
                        {"max_reward", r.max_reward}};
  write_json(out / "summary.json", summary);
  return summary;
}

}  // namespace

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"synth", "train", "encode", "decode", "eval-recon", "score", "rl-demo"};
  return s;
}

json defaults(const std::string& sub) {
  const json gen = without_seed(corpus::to_json(corpus::GeneratorSpec{}));
  if (sub == "synth") return {{"seed", 0}, {"n", 1000}, {"generator", gen}, {"output", "corpus.jsonl"}};
  if (sub == "train") {
    return {{"seed", 0},
            {"corpus", ""},
            {"format", "auto"},
            {"nan_policy", "interpolate"},
            {"synth_n", 4000},
            {"generator", gen},
            {"val_ratio", 0.1},
            {"resume", false},
            {"train", without_seed(train::to_json(train::TrainConfig{}))}};
  }
  if (sub == "encode" || sub == "eval-recon") {
    return {{"seed", 0}, {"model", ""}, {"input", ""}, {"format", "auto"}, {"nan_policy", "interpolate"}};
  }
  if (sub == "decode") return {{"seed", 0}, {"model", ""}, {"input", ""}};
  if (sub == "score") {
    return {{"seed", 0},      {"input", ""},     {"completion", ""}, {"task", "match"}, {"label", ""},
            {"target", json::array()}, {"w_correct", 1.0}, {"w_format", 1.0}, {"model", ""}};
  }
  if (sub == "rl-demo") {
    train::TrainConfig small;
    small.model = {64, 64, 2, 16, 3, 64};
    small.batch_size = 128;
    small.epochs = 2;
    small.warmup_steps = 20;
    small.kmeans_samples = 4096;
    small.kmeans_iters = 10;
    small.dead_code_threshold = 32;
    return {{"seed", 0},
            {"tokenizer", ""},
            {"tokenizer_train",
             {{"generator", gen}, {"synth_n", 200}, {"val_ratio", 0.1}, {"train", without_seed(train::to_json(small))}}},
            {"rl", without_seed(grpo::to_json(grpo::RlConfig{}))}};
  }
  throw Error("unknown subcommand '" + sub + "'");
}

json resolve(const std::string& sub, const json& file_config, const json& overrides) {
  json c = defaults(sub);
  for (const json* layer : {&file_config, &overrides}) {
    if (layer->is_null()) continue;
    if (!layer->is_object()) throw Error("configuration must be a JSON object");
    for (const auto& [key, v] : layer->items()) {
      if (!c.contains(key)) throw Error("unknown " + sub + " setting '" + key + "'");
    }
    c.merge_patch(*layer);
  }
  for (const char* key : {"corpus", "model", "input", "tokenizer"}) {
    if (c.contains(key) && c[key].is_string() && !c[key].get<std::string>().empty()) {
      c[key] = fs::absolute(c[key].get<std::string>()).lexically_normal().string();
    }
  }
  return c;
}

std::string config_hash(const json& config) {
  const std::string s = config.dump();
  const auto h = ckpt::fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path output_root() {
  const char* env = std::getenv("COUNTS_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

fs::path default_out_dir(const std::string& sub, const json& config) {
  return output_root() / (sub + "-" + config_hash(config).substr(0, 12));
}

void write_manifest(const fs::path& out_dir, const std::string& sub, const json& config) {
  fs::create_directories(out_dir);
  write_json(out_dir / "manifest.json", {{"subcommand", sub},
                                         {"version", kVersion},
                                         {"seed", config.value("seed", std::uint64_t{0})},
                                         {"config_hash", config_hash(config)},
                                         {"config", config}});
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

Manifest read_manifest(const fs::path& path) {
  const json j = read_json_file(path);
  if (!j.contains("subcommand") || !j.contains("config")) throw Error("'" + path.string() + "' is not a run manifest");
  Manifest m{j.at("subcommand").get<std::string>(), j.at("config")};
  if (j.contains("config_hash") && j.at("config_hash").get<std::string>() != config_hash(m.config)) {
    throw Error("manifest config hash mismatch in '" + path.string() + "'");
  }
  return m;
}

json run(const std::string& sub, const json& config, const fs::path& out_dir) {
  write_manifest(out_dir, sub, config);
  if (sub == "synth") return run_synth(config, out_dir);
  if (sub == "train") return run_train(config, out_dir);
  if (sub == "encode") return run_encode(config, out_dir);
  if (sub == "decode") return run_decode(config, out_dir);
  if (sub == "eval-recon") return run_eval_recon(config, out_dir);
  if (sub == "score") return run_score(config, out_dir);
  if (sub == "rl-demo") return run_rl_demo(config, out_dir);
  throw Error("unknown subcommand '" + sub + "'");
}

}  // namespace counts::app
