// counts: command-line front end for the time-series tokenizer pipeline.

#include <CLI11.hpp>

#include <deque>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "counts/app.hpp"
#include "counts/error.hpp"
#include "counts/log.hpp"

namespace {

using nlohmann::json;

struct Common {
  std::string config;
  std::string from_manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
  int verbose = 0;
  bool quiet = false;
  bool print_config = false;
};

enum class Kind { kString, kNumber, kInt, kList, kFlagTrue, kFlagFalse };

// One flag bound to a config key such as "train.epochs".
struct Binding {
  CLI::Option* opt = nullptr;
  std::string key;
  Kind kind;
  std::string s;
  double d = 0.0;
  std::int64_t i = 0;
  bool b = false;
};

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw counts::Error("bad number in list: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void set_key(json& j, const std::string& key, json v) {
  const auto dot = key.find('.');
  if (dot == std::string::npos) j[key] = std::move(v);
  else j[key.substr(0, dot)][key.substr(dot + 1)] = std::move(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-series patch tokenizer: synthesis, training, encoding, rewards and an RL demo"};
  app.set_version_flag("--version", std::string(counts::app::kVersion));
  app.require_subcommand(1, 1);

  Common common;
  std::deque<Binding> bindings;  // stable addresses for CLI11
  std::map<CLI::App*, std::vector<Binding*>> by_sub;

  auto bind = [&](CLI::App* s, const std::string& flag, const std::string& key, Kind kind, const std::string& help) {
    auto& b = bindings.emplace_back();
    b.key = key;
    b.kind = kind;
    switch (kind) {
      case Kind::kString:
      case Kind::kList: b.opt = s->add_option(flag, b.s, help); break;
      case Kind::kNumber: b.opt = s->add_option(flag, b.d, help); break;
      case Kind::kInt: b.opt = s->add_option(flag, b.i, help); break;
      case Kind::kFlagTrue:
      case Kind::kFlagFalse: b.opt = s->add_flag(flag, b.b, help); break;
    }
    by_sub[s].push_back(&b);
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus (JSONL)");
  bind(synth, "-n,--n", "n", Kind::kInt, "number of series");
  bind(synth, "--output", "output", Kind::kString, "file name inside the output directory");

  auto* train = app.add_subcommand("train", "train the tokenizer");
  bind(train, "--corpus", "corpus", Kind::kString, "training corpus (default: synthesize)");
  bind(train, "--format", "format", Kind::kString, "jsonl | csv | csv-column | auto");
  bind(train, "--nan-policy", "nan_policy", Kind::kString, "interpolate | drop");
  bind(train, "--synth-n", "synth_n", Kind::kInt, "series to synthesize when no corpus is given");
  bind(train, "--val-ratio", "val_ratio", Kind::kNumber, "validation share");
  bind(train, "--epochs", "train.epochs", Kind::kInt, "epochs");
  bind(train, "--batch-size", "train.batch_size", Kind::kInt, "patches per step");
  bind(train, "--lr", "train.lr", Kind::kNumber, "peak learning rate");
  bind(train, "--beta", "train.beta", Kind::kNumber, "commitment weight");
  bind(train, "--estimator", "train.estimator", Kind::kString, "straight-through | rotation");
  bind(train, "--codebook-init", "train.codebook_init", Kind::kString, "kmeans | random");
  bind(train, "--no-expire", "train.expire_dead_codes", Kind::kFlagFalse, "disable dead-code expiration");
  bind(train, "--resume", "resume", Kind::kFlagTrue, "continue from last.ckpt in the output directory");

  auto* encode = app.add_subcommand("encode", "encode series into token streams");
  auto* decode = app.add_subcommand("decode", "decode token streams back to series");
  auto* evalr = app.add_subcommand("eval-recon", "reconstruction metrics of a checkpoint");
  for (auto* s : {encode, decode, evalr}) {
    bind(s, "-m,--model", "model", Kind::kString, "tokenizer checkpoint");
    bind(s, "-i,--input", "input", Kind::kString, s == decode ? "token file (.ctsf or .jsonl)" : "series file");
  }
  for (auto* s : {encode, evalr}) {
    bind(s, "--format", "format", Kind::kString, "jsonl | csv | csv-column | auto");
    bind(s, "--nan-policy", "nan_policy", Kind::kString, "interpolate | drop");
  }

  auto* score = app.add_subcommand("score", "score completions with the verifiable rewards");
  bind(score, "-i,--input", "input", Kind::kString, "JSONL of {completion, task?, label?, target?}");
  bind(score, "--completion", "completion", Kind::kString, "a single completion");
  bind(score, "--task", "task", Kind::kString, "match | forecast");
  bind(score, "--label", "label", Kind::kString, "expected answer (match)");
  bind(score, "--target", "target", Kind::kList, "comma-separated forecast target");
  bind(score, "--w-correct", "w_correct", Kind::kNumber, "correctness weight");
  bind(score, "--w-format", "w_format", Kind::kNumber, "format weight");
  bind(score, "-m,--model", "model", Kind::kString, "tokenizer for answers written as series tokens");

  auto* rl = app.add_subcommand("rl-demo", "GRPO/DAPO on a toy policy");
  bind(rl, "--task", "rl.task", Kind::kString, "classify | forecast");
  bind(rl, "--variant", "rl.variant", Kind::kString, "grpo | dapo");
  bind(rl, "--steps", "rl.steps", Kind::kInt, "policy updates");
  bind(rl, "--group-size", "rl.group_size", Kind::kInt, "completions per prompt");
  bind(rl, "--prompts", "rl.prompts_per_step", Kind::kInt, "prompts per update");
  bind(rl, "--lr", "rl.lr", Kind::kNumber, "learning rate");
  bind(rl, "--tokenizer", "tokenizer", Kind::kString, "tokenizer checkpoint (default: train a small one)");

  const std::map<std::string, CLI::App*> subs = {{"synth", synth},   {"train", train}, {"encode", encode},
                                                 {"decode", decode}, {"eval-recon", evalr},
                                                 {"score", score},   {"rl-demo", rl}};
  for (const auto& [name, s] : subs) {
    s->add_option("-c,--config", common.config, "JSON config file (flags override it)");
    s->add_option("--from-manifest", common.from_manifest, "re-run exactly from a previous manifest.json");
    s->add_option("-o,--out", common.out, "output directory (default: $COUNTS_OUTPUT_ROOT/<cmd>-<hash>)");
    s->add_option("--seed", common.seed, "random seed");
    s->add_flag("-v,--verbose", common.verbose, "more logging");
    s->add_flag("-q,--quiet", common.quiet, "warnings only");
    s->add_flag("--print-config", common.print_config, "print the resolved config as JSON and exit");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  std::string name;
  CLI::App* chosen = nullptr;
  for (const auto& [n, s] : subs) {
    if (s->parsed()) {
      name = n;
      chosen = s;
    }
  }

  using counts::log::Level;
  counts::log::level() = common.quiet ? Level::kWarn : common.verbose > 0 ? Level::kDebug : Level::kInfo;

  try {
    json config;
    if (!common.from_manifest.empty()) {
      const auto m = counts::app::read_manifest(common.from_manifest);
      if (m.subcommand != name) throw counts::Error("manifest is for '" + m.subcommand + "', not '" + name + "'");
      config = m.config;
    } else {
      json overrides = json::object();
      for (const auto* b : by_sub[chosen]) {
        if (b->opt->count() == 0) continue;
        switch (b->kind) {
          case Kind::kString: set_key(overrides, b->key, b->s); break;
          case Kind::kList: set_key(overrides, b->key, parse_list(b->s)); break;
          case Kind::kNumber: set_key(overrides, b->key, b->d); break;
          case Kind::kInt: set_key(overrides, b->key, b->i); break;
          case Kind::kFlagTrue: set_key(overrides, b->key, true); break;
          case Kind::kFlagFalse: set_key(overrides, b->key, false); break;
        }
      }
      if (common.seed) overrides["seed"] = *common.seed;
      const json file = common.config.empty() ? json() : counts::app::read_json_file(common.config);
      config = counts::app::resolve(name, file, overrides);
    }
    if (common.print_config) {
      std::cout << config.dump(2) << '\n';
      return 0;
    }
    const std::filesystem::path out =
        common.out.empty() ? counts::app::default_out_dir(name, config) : std::filesystem::path(common.out);
    const json summary = counts::app::run(name, config, out);
    std::cout << json{{"subcommand", name}, {"out", out.string()}, {"summary", summary}}.dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
