#include "counts/rvq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "counts/error.hpp"
#include "counts/log.hpp"

namespace counts::rvq {

Codebook Codebook::zeros(int level, int size, int dim) {
  Codebook b;
  b.level = level;
  b.vectors = Matrix::Zero(size, dim);
  b.sum_ema = Matrix::Zero(size, dim);
  b.usage_ema.assign(static_cast<std::size_t>(size), 0.0f);
  b.steps_since_use.assign(static_cast<std::size_t>(size), 0);
  return b;
}

void Codebook::reset_stats() {
  for (int k = 0; k < size(); ++k) reset_stats(k);
}

void Codebook::reset_stats(int code) {
  usage_ema[static_cast<std::size_t>(code)] = 1.0f;
  sum_ema.row(code) = vectors.row(code);
  steps_since_use[static_cast<std::size_t>(code)] = 0;
}

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

std::vector<int> nearest(const Matrix& queries, const Matrix& codes) {
  if (codes.rows() == 0) throw Error("nearest: empty codebook");
  if (queries.cols() != codes.cols()) throw Error("nearest: dimension mismatch");
  const Eigen::Index n = queries.rows();
  const Eigen::Index k = codes.rows();
  const Eigen::Index d = codes.cols();

  const Eigen::VectorXf code_sq = codes.rowwise().squaredNorm();
  const double max_code_sq = code_sq.maxCoeff();
  const Matrix dots = queries * codes.transpose();

  // Any summation order of a length-d float dot product errs by at most
  // gamma_d * sum|a_i b_i|; the prefilter score ||c||^2 - 2 q.c therefore errs
  // by at most gamma_d (||q||^2 + 2||c||^2). Twice that (plus slack) bounds
  // the gap between two compared scores.
  const double gamma = (static_cast<double>(d) + 2.0) * std::ldexp(1.0, -24);

  std::vector<int> out(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> candidates;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = dots.row(i);
    float best = std::numeric_limits<float>::infinity();
    for (Eigen::Index j = 0; j < k; ++j) best = std::min(best, code_sq[j] - 2.0f * row[j]);
    const double q_sq = queries.row(i).cast<double>().squaredNorm();
    const double margin = 4.0 * gamma * (q_sq + 2.0 * max_code_sq) + 1e-30;
    const double limit = static_cast<double>(best) + margin;

    candidates.clear();
    for (Eigen::Index j = 0; j < k; ++j) {
      if (static_cast<double>(code_sq[j] - 2.0f * row[j]) <= limit) candidates.push_back(j);
    }
    if (candidates.empty()) throw Error("nearest: non-finite query or codebook");
    const std::span<const float> q(queries.row(i).data(), static_cast<std::size_t>(d));
    double best_exact = std::numeric_limits<double>::infinity();
    Eigen::Index best_j = candidates.front();
    for (Eigen::Index j : candidates) {
      const double dist = squared_distance(q, {codes.row(j).data(), static_cast<std::size_t>(d)});
      if (dist < best_exact) {
        best_exact = dist;
        best_j = j;
      }
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best_j);
  }
  return out;
}

ResidualQuantizer::ResidualQuantizer(int levels, int codebook_size, int dim) {
  if (levels < 1 || codebook_size < 1 || dim < 1) throw Error("rvq: invalid configuration");
  for (int l = 0; l < levels; ++l) codebooks_.push_back(Codebook::zeros(l, codebook_size, dim));
}

bool ResidualQuantizer::initialized() const {
  return !codebooks_.empty() &&
         std::all_of(codebooks_.begin(), codebooks_.end(), [](const Codebook& b) { return b.initialized; });
}

void ResidualQuantizer::mark_initialized() {
  for (auto& b : codebooks_) b.initialized = true;
}

void ResidualQuantizer::require_initialized() const {
  if (!initialized()) throw Error("rvq: codebooks are not initialized");
}

BatchCodes ResidualQuantizer::quantize(const Matrix& embeddings) const {
  require_initialized();
  if (embeddings.cols() != dim()) throw Error("rvq quantize: embedding width mismatch");
  const int rows = static_cast<int>(embeddings.rows());
  BatchCodes out;
  out.levels = levels();
  out.indices.resize(static_cast<std::size_t>(rows * levels()));
  out.residual_norms.resize(out.indices.size());
  out.quantized = Matrix::Zero(rows, dim());
  Matrix residual = embeddings;
  for (int l = 0; l < levels(); ++l) {
    const auto& book = codebooks_[static_cast<std::size_t>(l)];
    out.level_inputs.push_back(residual);
    const auto idx = nearest(residual, book.vectors);
    for (int i = 0; i < rows; ++i) {
      const int j = idx[static_cast<std::size_t>(i)];
      out.indices[static_cast<std::size_t>(i * levels() + l)] = j;
      residual.row(i) -= book.vectors.row(j);
      out.quantized.row(i) += book.vectors.row(j);
      out.residual_norms[static_cast<std::size_t>(i * levels() + l)] =
          std::sqrt(residual.row(i).cast<double>().squaredNorm());
    }
  }
  return out;
}

RvqCode ResidualQuantizer::quantize(std::span<const float> embedding) const {
  if (static_cast<int>(embedding.size()) != dim()) throw Error("rvq quantize: embedding width mismatch");
  Matrix e(1, dim());
  std::copy(embedding.begin(), embedding.end(), e.data());
  const BatchCodes b = quantize(e);
  RvqCode c;
  c.indices = b.indices;
  c.quantized.assign(b.quantized.data(), b.quantized.data() + dim());
  c.residual_norms = b.residual_norms;
  return c;
}

Matrix ResidualQuantizer::dequantize_batch(std::span<const int> indices, int rows) const {
  require_initialized();
  if (indices.size() != static_cast<std::size_t>(rows * levels())) {
    throw Error("rvq dequantize: expected " + std::to_string(levels()) + " indices per row");
  }
  Matrix out = Matrix::Zero(rows, dim());
  for (int i = 0; i < rows; ++i) {
    for (int l = 0; l < levels(); ++l) {
      const int j = indices[static_cast<std::size_t>(i * levels() + l)];
      if (j < 0 || j >= codebook_size()) {
        throw Error("rvq dequantize: index " + std::to_string(j) + " out of range at level " +
                    std::to_string(l));
      }
      out.row(i) += codebooks_[static_cast<std::size_t>(l)].vectors.row(j);
    }
  }
  return out;
}

std::vector<float> ResidualQuantizer::dequantize(std::span<const int> indices) const {
  const Matrix m = dequantize_batch(indices, 1);
  return {m.data(), m.data() + m.size()};
}

// ---------------------------------------------------------------------------

namespace {

std::size_t weighted_pick(const std::vector<double>& w, double total, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, total);
  const double target = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (target < acc && w[i] > 0.0) return i;
  }
  // Rounding left target >= acc; take the last positive weight.
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return i;
  return w.size() - 1;
}

double inertia_of(const Matrix& samples, const Matrix& centers, const std::vector<int>& assign) {
  double s = 0.0;
  const auto d = static_cast<std::size_t>(samples.cols());
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    s += squared_distance({samples.row(i).data(), d},
                          {centers.row(assign[static_cast<std::size_t>(i)]).data(), d});
  }
  return s;
}

}  // namespace

KMeansResult kmeans(const Matrix& samples, int k, int max_iters, Rng& rng) {
  if (k < 1) throw Error("kmeans: k must be positive");
  if (samples.rows() == 0) throw Error("kmeans: no samples");
  const Eigen::Index n = samples.rows();
  KMeansResult res;
  res.centers = Matrix::Zero(k, samples.cols());

  if (n < k) {
    log::warn("kmeans: " + std::to_string(n) + " samples for " + std::to_string(k) +
              " centers; falling back to random-sample init");
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int c = 0; c < k; ++c) res.centers.row(c) = samples.row(pick(rng));
    res.fallback = true;
    return res;
  }

  // k-means++ seeding.
  std::vector<double> mind(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  auto absorb = [&](int c) {
    const Eigen::VectorXf dist = (samples.rowwise() - res.centers.row(c)).rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < n; ++i) mind[static_cast<std::size_t>(i)] = std::min<double>(mind[static_cast<std::size_t>(i)], dist[i]);
  };
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  res.centers.row(0) = samples.row(first(rng));
  absorb(0);
  for (int c = 1; c < k; ++c) {
    const double total = std::accumulate(mind.begin(), mind.end(), 0.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      pick = static_cast<Eigen::Index>(weighted_pick(mind, total, rng));
    } else {
      pick = first(rng);
    }
    res.centers.row(c) = samples.row(pick);
    absorb(c);
  }

  // Lloyd iterations.
  std::vector<int> assign;
  std::uniform_int_distribution<Eigen::Index> reseed(0, n - 1);
  for (int it = 0; it < max_iters; ++it) {
    auto next = nearest(samples, res.centers);
    res.inertia.push_back(inertia_of(samples, res.centers, next));
    ++res.iterations;
    if (next == assign) break;
    assign = std::move(next);

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, samples.cols());
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      sums.row(c) += samples.row(i).cast<double>();
      ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        res.centers.row(c) = (sums.row(c) / double(counts[static_cast<std::size_t>(c)])).cast<float>();
      } else {
        res.centers.row(c) = samples.row(reseed(rng));
      }
    }
  }
  return res;
}

void kmeans_init(ResidualQuantizer& q, const Matrix& samples, Rng& rng, int max_iters) {
  if (samples.cols() != q.dim()) throw Error("kmeans_init: sample width mismatch");
  Matrix residual = samples;
  for (auto& book : q.codebooks()) {
    auto res = kmeans(residual, book.size(), max_iters, rng);
    book.vectors = std::move(res.centers);
    book.reset_stats();
    book.initialized = true;
    const auto idx = nearest(residual, book.vectors);
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= book.vectors.row(idx[static_cast<std::size_t>(i)]);
  }
}

void random_init(ResidualQuantizer& q, const Matrix& samples, Rng& rng) {
  if (samples.cols() != q.dim()) throw Error("random_init: sample width mismatch");
  Matrix residual = samples;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& book : q.codebooks()) {
    const Eigen::RowVectorXd mean = residual.cast<double>().colwise().mean();
    const double var =
        (residual.cast<double>().rowwise() - mean).squaredNorm() / double(residual.size());
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (Eigen::Index i = 0; i < book.vectors.size(); ++i) book.vectors.data()[i] = static_cast<float>(sd * normal(rng));
    book.reset_stats();
    book.initialized = true;
    const auto idx = nearest(residual, book.vectors);
    for (Eigen::Index i = 0; i < residual.rows(); ++i) residual.row(i) -= book.vectors.row(idx[static_cast<std::size_t>(i)]);
  }
}

void ema_update(Codebook& book, const Matrix& level_inputs, std::span<const int> assignment,
                double decay, double eps) {
  if (decay < 0.0 || decay >= 1.0) throw Error("ema_update: decay must be in [0, 1)");
  if (static_cast<Eigen::Index>(assignment.size()) != level_inputs.rows()) {
    throw Error("ema_update: assignment count does not match batch");
  }
  const int k = book.size();
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, book.dim());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int c = assignment[i];
    counts[static_cast<std::size_t>(c)] += 1.0;
    sums.row(c) += level_inputs.row(static_cast<Eigen::Index>(i)).cast<double>();
  }
  for (int c = 0; c < k; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    const double usage = decay * book.usage_ema[cu] + (1.0 - decay) * counts[cu];
    const Eigen::RowVectorXd sum = decay * book.sum_ema.row(c).cast<double>() + (1.0 - decay) * sums.row(c);
    book.usage_ema[cu] = static_cast<float>(usage);
    book.sum_ema.row(c) = sum.cast<float>();
    if (counts[cu] > 0.0) {
      book.vectors.row(c) = (sum / (usage + eps)).cast<float>();
      book.steps_since_use[cu] = 0;
    } else {
      ++book.steps_since_use[cu];
    }
  }
}

void ema_update(ResidualQuantizer& q, const BatchCodes& codes, double decay) {
  std::vector<int> level_idx(static_cast<std::size_t>(codes.rows()));
  for (int l = 0; l < q.levels(); ++l) {
    for (int i = 0; i < codes.rows(); ++i) level_idx[static_cast<std::size_t>(i)] = codes.index(i, l);
    ema_update(q.codebooks()[static_cast<std::size_t>(l)], codes.level_inputs[static_cast<std::size_t>(l)],
               level_idx, decay);
  }
}

int expire_dead_codes(Codebook& book, const Matrix& level_inputs, int threshold, Rng& rng) {
  std::vector<int> dead;
  for (int c = 0; c < book.size(); ++c) {
    if (book.steps_since_use[static_cast<std::size_t>(c)] > threshold) dead.push_back(c);
  }
  if (dead.empty() || level_inputs.rows() == 0) return 0;

  std::vector<Eigen::Index> pool(static_cast<std::size_t>(level_inputs.rows()));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  std::shuffle(pool.begin(), pool.end(), rng);
  std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
  for (std::size_t i = 0; i < dead.size(); ++i) {
    const Eigen::Index src = i < pool.size() ? pool[i] : pool[any(rng)];
    book.vectors.row(dead[i]) = level_inputs.row(src);
    book.reset_stats(dead[i]);
  }
  return static_cast<int>(dead.size());
}

int expire_dead_codes(ResidualQuantizer& q, const BatchCodes& codes, int threshold, Rng& rng) {
  int n = 0;
  for (int l = 0; l < q.levels(); ++l) {
    n += expire_dead_codes(q.codebooks()[static_cast<std::size_t>(l)],
                           codes.level_inputs[static_cast<std::size_t>(l)], threshold, rng);
  }
  return n;
}

LevelUsage usage_stats(std::span<const std::int64_t> counts) {
  LevelUsage u;
  if (counts.empty()) return u;
  std::int64_t total = 0;
  std::size_t used = 0;
  for (auto c : counts) {
    total += c;
    if (c > 0) ++used;
  }
  u.utilization_pct = 100.0 * double(used) / double(counts.size());
  if (total == 0) return u;
  double h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const double p = double(c) / double(total);
    h -= p * std::log(p);
  }
  u.perplexity = std::exp(h);
  return u;
}

UsageCounter::UsageCounter(int levels, int codebook_size)
    : size_(codebook_size),
      counts_(static_cast<std::size_t>(levels), std::vector<std::int64_t>(static_cast<std::size_t>(codebook_size), 0)) {}

void UsageCounter::add(const BatchCodes& codes) {
  for (int i = 0; i < codes.rows(); ++i)
    for (int l = 0; l < codes.levels; ++l) ++counts_[static_cast<std::size_t>(l)][static_cast<std::size_t>(codes.index(i, l))];
}

LevelUsage UsageCounter::level(int l) const { return usage_stats(counts_.at(static_cast<std::size_t>(l))); }

void UsageCounter::clear() {
  for (auto& c : counts_) std::fill(c.begin(), c.end(), 0);
}

}  // namespace counts::rvq
