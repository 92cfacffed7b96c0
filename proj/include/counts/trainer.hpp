#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "counts/error.hpp"
#include "counts/nn.hpp"
#include "counts/rvq.hpp"
#include "counts/tokenizer.hpp"
#include "counts/ts_core.hpp"

namespace counts::train {

enum class Estimator { kStraightThrough, kRotation };
enum class CodebookInit { kKMeans, kRandom };

std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);
std::string to_string(CodebookInit c);
CodebookInit codebook_init_from_string(const std::string& s);

struct TrainConfig {
  int batch_size = 256;
  int epochs = 20;
  double lr = 1e-3;
  int warmup_steps = 100;
  double final_lr_ratio = 0.05;  // cosine decays to lr * ratio
  double beta = 0.25;            // commitment weight
  double ema_decay = 0.99;
  int dead_code_threshold = 64;  // steps without assignment
  bool expire_dead_codes = true;
  Estimator estimator = Estimator::kStraightThrough;
  CodebookInit codebook_init = CodebookInit::kKMeans;
  int kmeans_samples = 16384;
  int kmeans_iters = 25;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
  int checkpoint_every = 1;  // epochs; 0 keeps only best/last at the end
  tok::TokenizerConfig model;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys throw.
TrainConfig train_config_from_json(const nlohmann::json& j);

// d loss / d e given d loss / d q.
//   straight-through: grad_q
//   rotation: (|q|/|e|) R^T grad_q with R the rotation taking e/|e| to q/|q|
// Zero norms or e/|e| ~ -q/|q| fall back to straight-through; `fallback`
// reports which path ran.
std::vector<double> gradient_estimator(std::span<const double> e, std::span<const double> q,
                                       std::span<const double> grad_q, Estimator mode,
                                       bool* fallback = nullptr);

// Row-wise version used by the trainer. Returns the number of fallbacks.
int gradient_estimator(const rvq::Matrix& e, const rvq::Matrix& q, const rvq::Matrix& grad_q,
                       Estimator mode, rvq::Matrix& grad_e);

struct StepMetrics {
  std::int64_t step = 0;  // 1-based count of optimizer steps taken
  double lr = 0.0;
  double recon = 0.0;   // mean squared error over batch x 64
  double commit = 0.0;  // mean squared (e - q) over batch x dim
  double total = 0.0;   // recon + beta * commit
  double grad_norm = 0.0;
  std::vector<double> utilization;  // per level, % codes used by this batch
  std::vector<double> perplexity;
  int expired = 0;
  int fallbacks = 0;

  nlohmann::json to_json() const;
};

// Intermediates of one step, for tests.
struct StepTrace {
  rvq::Matrix embeddings;     // encoder output e
  rvq::Matrix quantized;      // q
  rvq::Matrix recon;          // decoder output
  rvq::Matrix grad_quantized; // d recon / d q
  rvq::Matrix grad_estimated; // estimator output, before the commitment term
  rvq::Matrix grad_embedding; // total gradient reaching the encoder output
  rvq::BatchCodes codes;
  rvq::ResidualQuantizer rvq_before;
};

class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, nlohmann::json dump) : Error(what), dump_(std::move(dump)) {}
  const nlohmann::json& dump() const { return dump_; }

 private:
  nlohmann::json dump_;
};

class Trainer {
 public:
  Trainer(tok::TokenizerModel& model, TrainConfig config);

  const TrainConfig& config() const { return config_; }
  tok::TokenizerModel& model() { return model_; }

  // Initialises every codebook level from `samples` (scaled patches) per
  // config.codebook_init, encoding them with the current encoder.
  void init_codebooks(const rvq::Matrix& samples);

  // One optimizer step on a batch of scaled patches.
  StepMetrics train_step(const rvq::Matrix& batch, StepTrace* trace = nullptr);

  void set_total_steps(std::int64_t n) { total_steps_ = n; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t step() const { return step_; }
  double learning_rate(std::int64_t step) const;

  // Optimizer state, stored alongside the model in a checkpoint.
  void save_state(ckpt::Container& c) const;
  void load_state(const ckpt::Container& c);

 private:
  std::vector<nn::Tensor<float>*> parameters();

  tok::TokenizerModel& model_;
  TrainConfig config_;
  nn::Mlp<float> enc_grad_;
  nn::Mlp<float> dec_grad_;
  nn::Adam<float> adam_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 1;
};

struct EvalMetrics {
  double recon_mse = 0.0;  // scaled space, all 64 samples
  double smape = 0.0;      // mean per-patch SMAPE of real samples, original units
  std::vector<rvq::LevelUsage> levels;
  std::int64_t patches = 0;

  nlohmann::json to_json() const;
};

// A validation patch remembers how many of its samples are real.
struct EvalPatch {
  ts::Patch patch;
  int valid = static_cast<int>(ts::kPatchLength);
};

std::vector<EvalPatch> eval_patches(const std::vector<ts::Series>& series);
std::vector<ts::Patch> train_patches(const std::vector<ts::Series>& series);

EvalMetrics evaluate(const tok::TokenizerModel& model, const std::vector<EvalPatch>& patches,
                     int batch_size = 1024);

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  double train_recon = 0.0;
  double train_commit = 0.0;
  double train_total = 0.0;
  int expired = 0;
  EvalMetrics val;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

struct FitOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  bool resume = false;            // continue from out_dir/last.ckpt if present
  int log_every = 50;             // steps between progress lines
  std::optional<int> stop_after_epoch;  // for tests: interrupt after this epoch
};

struct FitResult {
  EvalMetrics baseline;  // untrained model, random codebooks
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  EvalMetrics best;
};

// Trains `model` in place. Writes metrics.jsonl, metrics.csv, last.ckpt (per
// checkpoint_every), best.ckpt and, on divergence, diverged.json.
FitResult fit(tok::TokenizerModel& model, const std::vector<ts::Series>& train,
              const std::vector<ts::Series>& val, const TrainConfig& config, const FitOptions& options = {});

// Fresh model for `config` with network weights drawn from the config seed.
tok::TokenizerModel initial_model(const TrainConfig& config);

}  // namespace counts::train
