#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "counts/nn.hpp"
#include "counts/rng.hpp"

namespace counts::rvq {

using Matrix = nn::Tensor<float>;

inline constexpr int kDefaultLevels = 3;
inline constexpr int kDefaultCodebookSize = 2048;
inline constexpr int kDefaultDim = 128;
inline constexpr double kDefaultEmaDecay = 0.99;
inline constexpr int kDefaultDeadCodeThreshold = 64;

struct Codebook {
  int level = 0;
  Matrix vectors;                          // size x dim
  std::vector<float> usage_ema;            // EMA of per-batch assignment counts
  Matrix sum_ema;                          // EMA of per-batch assigned vector sums
  std::vector<std::int32_t> steps_since_use;
  bool initialized = false;

  static Codebook zeros(int level, int size, int dim);

  int size() const { return static_cast<int>(vectors.rows()); }
  int dim() const { return static_cast<int>(vectors.cols()); }

  // usage_ema = 1, sum_ema = vectors, steps_since_use = 0.
  void reset_stats();
  void reset_stats(int code);
};

struct RvqCode {
  std::vector<int> indices;
  std::vector<float> quantized;
  // Norm of the residual left after each level, i.e. ||r_{l+1}||.
  std::vector<double> residual_norms;
};

struct BatchCodes {
  int levels = 0;
  std::vector<int> indices;           // rows x levels, row-major
  Matrix quantized;                   // rows x dim
  std::vector<Matrix> level_inputs;   // residual entering each level
  std::vector<double> residual_norms; // rows x levels

  int rows() const { return static_cast<int>(quantized.rows()); }
  int index(int row, int level) const { return indices[static_cast<std::size_t>(row * levels + level)]; }
};

// For each query row, the index of the code minimising the squared Euclidean
// distance evaluated in double precision; ties go to the lowest index.
// A float GEMM prefilter narrows candidates within a bound on its rounding
// error, so the result matches an exhaustive double-precision scan.
std::vector<int> nearest(const Matrix& queries, const Matrix& codes);

// Exact squared distance as the exhaustive scan defines it.
double squared_distance(std::span<const float> a, std::span<const float> b);

class ResidualQuantizer {
 public:
  ResidualQuantizer() = default;
  ResidualQuantizer(int levels, int codebook_size, int dim);

  int levels() const { return static_cast<int>(codebooks_.size()); }
  int codebook_size() const { return codebooks_.empty() ? 0 : codebooks_.front().size(); }
  int dim() const { return codebooks_.empty() ? 0 : codebooks_.front().dim(); }
  bool initialized() const;
  void mark_initialized();

  std::vector<Codebook>& codebooks() { return codebooks_; }
  const std::vector<Codebook>& codebooks() const { return codebooks_; }

  RvqCode quantize(std::span<const float> embedding) const;
  BatchCodes quantize(const Matrix& embeddings) const;

  // Sum of the selected codes, accumulated level by level in float so the
  // result is bit-identical to the `quantized` field produced by quantize().
  std::vector<float> dequantize(std::span<const int> indices) const;
  Matrix dequantize_batch(std::span<const int> indices, int rows) const;

 private:
  void require_initialized() const;
  std::vector<Codebook> codebooks_;
};

// k-means++ seeding followed by at most `max_iters` Lloyd iterations.
struct KMeansResult {
  Matrix centers;
  std::vector<double> inertia;  // after each Lloyd assignment
  int iterations = 0;
  bool fallback = false;        // too few samples; centers drawn at random
};

KMeansResult kmeans(const Matrix& samples, int k, int max_iters, Rng& rng);

// Level 0 clusters the embeddings, later levels cluster the residuals left
// after quantizing with the already-initialised levels.
void kmeans_init(ResidualQuantizer& q, const Matrix& samples, Rng& rng, int max_iters = 25);

// Gaussian codes with per-dimension std matched to the level inputs.
void random_init(ResidualQuantizer& q, const Matrix& samples, Rng& rng);

// EMA codebook learning for one level.
//   usage <- d*usage + (1-d)*count,  sum <- d*sum + (1-d)*assigned_sum
//   vector <- sum / (usage + eps) for codes assigned in this batch
// Unassigned codes keep their vector; their stats decay and steps_since_use
// increments.
void ema_update(Codebook& book, const Matrix& level_inputs, std::span<const int> assignment,
                double decay, double eps = 1e-5);
void ema_update(ResidualQuantizer& q, const BatchCodes& codes, double decay);

// Replaces codes unused for more than `threshold` updates with rows drawn
// from `level_inputs`. Returns the number replaced.
int expire_dead_codes(Codebook& book, const Matrix& level_inputs, int threshold, Rng& rng);
int expire_dead_codes(ResidualQuantizer& q, const BatchCodes& codes, int threshold, Rng& rng);

struct LevelUsage {
  double utilization_pct = 0.0;  // % of codes assigned at least once
  double perplexity = 0.0;       // exp(-sum p log p)
};

LevelUsage usage_stats(std::span<const std::int64_t> counts);

// Per-level assignment histograms accumulated across batches.
class UsageCounter {
 public:
  UsageCounter(int levels, int codebook_size);
  void add(const BatchCodes& codes);
  LevelUsage level(int l) const;
  void clear();

 private:
  int size_;
  std::vector<std::vector<std::int64_t>> counts_;
};

}  // namespace counts::rvq
