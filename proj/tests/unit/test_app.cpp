#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "counts/app.hpp"
#include "counts/corpus.hpp"
#include "counts/error.hpp"
#include "counts/tokenizer.hpp"

using namespace counts;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "counts_test_app";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(COUNTS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& body) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << body;
}

struct Fresh {
  Fresh() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_CASE("exit codes for usage errors") {
  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("synth --help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("synth --no-such-flag") == 2);
  CHECK(run_cli("bogus") == 2);
  CHECK(run_cli("train --epochs abc") == 2);
}

TEST_CASE("runtime errors exit 1") {
  Fresh f;
  CHECK(run_cli("encode -m /nonexistent.ckpt -i /nonexistent.jsonl -o " + (kRoot / "e").string()) == 1);
  write(kRoot / "bad.json", "{\"n\": 3, \"colour\": 1}");
  CHECK(run_cli("synth -c " + (kRoot / "bad.json").string() + " -o " + (kRoot / "s").string()) == 1);
}

TEST_CASE("synth is deterministic and re-runs from its manifest") {
  Fresh f;
  REQUIRE(run_cli("synth -n 5 --seed 3 -o " + (kRoot / "a").string()) == 0);
  REQUIRE(run_cli("synth -n 5 --seed 3 -o " + (kRoot / "b").string()) == 0);
  REQUIRE(run_cli("synth --from-manifest " + (kRoot / "a" / "manifest.json").string() + " -o " +
                  (kRoot / "c").string()) == 0);
  const auto a = slurp(kRoot / "a" / "corpus.jsonl");
  CHECK_FALSE(a.empty());
  CHECK(a == slurp(kRoot / "b" / "corpus.jsonl"));
  CHECK(a == slurp(kRoot / "c" / "corpus.jsonl"));
  CHECK(slurp(kRoot / "a" / "metrics.json") == slurp(kRoot / "c" / "metrics.json"));
  REQUIRE(run_cli("synth -n 5 --seed 4 -o " + (kRoot / "d").string()) == 0);
  CHECK(a != slurp(kRoot / "d" / "corpus.jsonl"));

  const json m = json::parse(slurp(kRoot / "a" / "manifest.json"));
  CHECK(m["subcommand"] == "synth");
  CHECK(m["seed"] == 3);
  CHECK(m["config"]["n"] == 5);
  CHECK(m["config_hash"] == app::config_hash(m["config"]));
}

TEST_CASE("default output directory is derived from the config hash") {
  Fresh f;
  ::setenv("COUNTS_OUTPUT_ROOT", kRoot.c_str(), 1);
  const json c = app::resolve("synth", json(), {{"n", 2}});
  const auto dir = app::default_out_dir("synth", c);
  CHECK(dir.parent_path() == kRoot);
  CHECK(dir.filename().string() == "synth-" + app::config_hash(c).substr(0, 12));
  REQUIRE(run_cli("synth -n 2") == 0);
  CHECK(fs::exists(dir / "corpus.jsonl"));
  ::unsetenv("COUNTS_OUTPUT_ROOT");
}

TEST_CASE("resolve layers defaults, file and overrides") {
  const json file = {{"n", 10}, {"generator", {{"length", {300, 400}}}}};
  const json c = app::resolve("synth", file, {{"n", 20}});
  CHECK(c["n"] == 20);
  CHECK(c["generator"]["length"] == json::array({300, 400}));
  CHECK(c["output"] == "corpus.jsonl");
  CHECK_THROWS_AS(app::resolve("synth", {{"epochs", 1}}, json()), Error);
  const json e = app::resolve("encode", json(), {{"input", "rel/x.jsonl"}});
  CHECK(fs::path(e["input"].get<std::string>()).is_absolute());
  CHECK_THROWS_AS(app::defaults("nope"), Error);
}

TEST_CASE("score grades the appendix answer and forecast completions") {
  Fresh f;
  const auto out = kRoot / "score";
  REQUIRE(run_cli("score --label 'subendocardial injury in inferolateral leads' --completion "
                  "'<think>ST depression in II, III, aVF</think><answer>(36) subendocardial injury in "
                  "inferolateral leads</answer>' -o " +
                  out.string()) == 0);
  const json line = json::parse(slurp(out / "scores.jsonl"));
  CHECK(line["format"] == 1.0);
  CHECK(line["correctness"] == 1.0);
  CHECK(line["total"] == 2.0);

  write(kRoot / "items.jsonl",
        "{\"completion\": \"<answer>3</answer>\", \"task\": \"forecast\", \"target\": [1]}\n"
        "{\"completion\": \"nothing\", \"task\": \"forecast\", \"target\": [1]}\n");
  const auto out2 = kRoot / "score2";
  REQUIRE(run_cli("score -i " + (kRoot / "items.jsonl").string() + " -o " + out2.string()) == 0);
  std::istringstream lines(slurp(out2 / "scores.jsonl"));
  std::string l1, l2;
  std::getline(lines, l1);
  std::getline(lines, l2);
  CHECK(json::parse(l1)["total"] == 1.0 + 0.5);
  CHECK(json::parse(l2)["total"] == 0.0);
}

TEST_CASE("train, encode, decode and eval-recon on a tiny configuration") {
  Fresh f;
  write(kRoot / "train.json", R"({
    "synth_n": 30,
    "generator": {"length": [256, 320]},
    "train": {"epochs": 1, "batch_size": 32, "warmup_steps": 2, "kmeans_samples": 256, "kmeans_iters": 3,
              "model": {"hidden": 16, "ff": 16, "blocks": 1, "embed_dim": 8, "levels": 3, "codebook_size": 16}}
  })");
  const auto tr = kRoot / "train";
  REQUIRE(run_cli("train -c " + (kRoot / "train.json").string() + " --seed 1 -o " + tr.string()) == 0);
  for (const char* name : {"model.ckpt", "summary.json", "metrics.jsonl", "metrics.csv", "manifest.json"}) {
    CHECK(fs::exists(tr / name));
  }

  REQUIRE(run_cli("synth -n 3 --seed 9 -o " + (kRoot / "data").string()) == 0);
  const auto data = (kRoot / "data" / "corpus.jsonl").string();
  const auto enc = kRoot / "enc";
  REQUIRE(run_cli("encode -m " + (tr / "model.ckpt").string() + " -i " + data + " -o " + enc.string()) == 0);
  const auto streams = tok::read_stream_file(enc / "tokens.ctsf");
  const auto series = corpus::ingest(data, corpus::Format::kJsonl);
  REQUIRE(streams.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(streams[i].stream.tokens.size() == 4 * ts::patch_count(series[i].values.size()));
  }

  const auto dec = kRoot / "dec";
  REQUIRE(run_cli("decode -m " + (tr / "model.ckpt").string() + " -i " + (enc / "tokens.ctsf").string() + " -o " +
                  dec.string()) == 0);
  const auto back = corpus::ingest(dec / "decoded.jsonl", corpus::Format::kJsonl);
  const auto model = tok::load_model(tr / "model.ckpt");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i].values == tok::reconstruct(series[i], model));

  REQUIRE(run_cli("eval-recon -m " + (tr / "model.ckpt").string() + " -i " + data + " -o " +
                  (kRoot / "ev").string()) == 0);
  const json ev = json::parse(slurp(kRoot / "ev" / "metrics.json"));
  CHECK(ev["patches"].get<int>() > 0);
  CHECK(ev.contains("smape"));
}

TEST_CASE("eval-recon accepts an untrained checkpoint") {
  Fresh f;
  tok::TokenizerConfig c;
  c.hidden = 8;
  c.ff = 8;
  c.blocks = 1;
  c.embed_dim = 4;
  c.codebook_size = 8;
  Rng rng(2);
  tok::save_model(kRoot / "untrained.ckpt", tok::TokenizerModel::create(c, rng));
  REQUIRE(run_cli("synth -n 2 -o " + (kRoot / "data").string()) == 0);
  REQUIRE(run_cli("eval-recon -m " + (kRoot / "untrained.ckpt").string() + " -i " +
                  (kRoot / "data" / "corpus.jsonl").string() + " -o " + (kRoot / "ev").string()) == 0);
  const json ev = json::parse(slurp(kRoot / "ev" / "metrics.json"));
  CHECK(ev["recon_mse"].get<double>() > 0.0);
}
