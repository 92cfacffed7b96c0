#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "counts/rng.hpp"

namespace counts::nn {

// Row-major batch x features. Rows are samples.
template <typename T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Column = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kRmsNormEps = 1e-6;

// ---------------------------------------------------------------------------
// Primitives. Each backward returns the input gradient; parameter gradients
// are accumulated into the optional out-arguments.

// y = x / sqrt(mean(x^2) + eps) * gain, per row. gain is 1 x d.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, Column<T>* inv_rms = nullptr);

template <typename T>
Tensor<T> rmsnorm_backward(const Tensor<T>& x, const Tensor<T>& gain, const Column<T>& inv_rms,
                           const Tensor<T>& grad_out, Tensor<T>* grad_gain);

// h = [a | b] split by columns; returns a * sigmoid(a) * b.
template <typename T>
Tensor<T> swiglu(const Tensor<T>& h);

template <typename T>
Tensor<T> swiglu_backward(const Tensor<T>& h, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------

struct MlpConfig {
  int input = 64;
  int hidden = 512;
  int output = 128;
  int blocks = 6;
  int ff = 512;  // SwiGLU inner width

  bool operator==(const MlpConfig&) const = default;
};

// RMSNorm -> Linear(in, 2*ff) -> SwiGLU -> Linear(ff, out), plus a shortcut
// that is the identity when in == out and an affine map otherwise.
template <typename T>
struct Block {
  Tensor<T> norm_gain;
  Tensor<T> w_in, b_in;
  Tensor<T> w_out, b_out;
  Tensor<T> w_skip, b_skip;  // empty when in == out

  int in_width() const { return static_cast<int>(w_in.rows()); }
  int out_width() const { return static_cast<int>(w_out.cols()); }
  bool has_skip() const { return w_skip.size() > 0; }
};

template <typename T>
struct BlockCache {
  Tensor<T> x;
  Column<T> inv_rms;
  Tensor<T> normed;
  Tensor<T> h;
  Tensor<T> act;
};

template <typename T>
class Mlp {
 public:
  struct Cache {
    const Mlp* owner = nullptr;
    std::uint64_t generation = 0;
    std::vector<BlockCache<T>> blocks;
  };

  Mlp() = default;
  // All parameters zero, gains zero. Use init() for a trainable model.
  explicit Mlp(const MlpConfig& config);

  static Mlp init(const MlpConfig& config, Rng& rng);

  const MlpConfig& config() const { return config_; }
  std::size_t parameter_count() const;
  std::vector<Block<T>>& blocks() {
    ++generation_;
    return blocks_;
  }
  const std::vector<Block<T>>& blocks() const { return blocks_; }

  Tensor<T> forward(const Tensor<T>& x) const;
  Tensor<T> forward(const Tensor<T>& x, Cache& cache) const;

  // Accumulates parameter gradients into `grads` (same architecture) and
  // returns d loss / d input. Throws if `cache` came from another model or the
  // parameters changed since the forward pass.
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out, Mlp& grads) const;

  Mlp zeros_like() const { return Mlp(config_); }
  void set_zero();

  // Visits (name, tensor) in a fixed order. The mutable overload bumps the
  // generation so stale caches are detected.
  template <typename F>
  void visit(F&& f) {
    ++generation_;
    visit_impl(blocks_, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(blocks_, f);
  }

  std::vector<Tensor<T>*> parameters();

  template <typename U>
  Mlp<U> cast() const;

  std::uint64_t generation() const { return generation_; }

 private:
  template <typename U>
  friend class Mlp;

  template <typename Blocks, typename F>
  static void visit_impl(Blocks& blocks, F& f) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      auto& b = blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      f(p + "norm.gain", b.norm_gain);
      f(p + "ff_in.weight", b.w_in);
      f(p + "ff_in.bias", b.b_in);
      f(p + "ff_out.weight", b.w_out);
      f(p + "ff_out.bias", b.b_out);
      if (b.has_skip()) {
        f(p + "skip.weight", b.w_skip);
        f(p + "skip.bias", b.b_skip);
      }
    }
  }

  MlpConfig config_;
  std::vector<Block<T>> blocks_;
  std::uint64_t generation_ = 0;
};

template <typename T>
template <typename U>
Mlp<U> Mlp<T>::cast() const {
  Mlp<U> out(config_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& s = blocks_[i];
    auto& d = out.blocks_[i];
    d.norm_gain = s.norm_gain.template cast<U>();
    d.w_in = s.w_in.template cast<U>();
    d.b_in = s.b_in.template cast<U>();
    d.w_out = s.w_out.template cast<U>();
    d.b_out = s.b_out.template cast<U>();
    d.w_skip = s.w_skip.template cast<U>();
    d.b_skip = s.b_skip.template cast<U>();
  }
  return out;
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over an externally owned, fixed-order list of tensors.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig config) : config_(config) {}

  void step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
            double lr);

  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t s) { steps_ = s; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Sum of squares of every gradient tensor.
template <typename T>
double squared_norm(const std::vector<const Tensor<T>*>& tensors);

}  // namespace counts::nn
