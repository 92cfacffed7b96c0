#include "counts/nn.hpp"

#include <cmath>

#include "counts/error.hpp"

namespace counts::nn {

namespace {

template <typename T>
void require_cols(const Tensor<T>& x, Eigen::Index cols, const char* what) {
  if (x.cols() != cols) {
    throw Error(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                std::to_string(x.cols()));
  }
}

template <typename T>
Tensor<T> uniform(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Block<T> zero_block(int in, int ff, int out) {
  Block<T> b;
  b.norm_gain = Tensor<T>::Zero(1, in);
  b.w_in = Tensor<T>::Zero(in, 2 * ff);
  b.b_in = Tensor<T>::Zero(1, 2 * ff);
  b.w_out = Tensor<T>::Zero(ff, out);
  b.b_out = Tensor<T>::Zero(1, out);
  if (in != out) {
    b.w_skip = Tensor<T>::Zero(in, out);
    b.b_skip = Tensor<T>::Zero(1, out);
  }
  return b;
}

template <typename T>
Tensor<T> block_forward(const Block<T>& b, const Tensor<T>& x, BlockCache<T>* cache) {
  Column<T> inv_rms;
  Tensor<T> normed = rmsnorm(x, b.norm_gain, &inv_rms);
  Tensor<T> h = normed * b.w_in;
  h.rowwise() += b.b_in.row(0);
  Tensor<T> act = swiglu(h);
  Tensor<T> y = act * b.w_out;
  y.rowwise() += b.b_out.row(0);
  if (b.has_skip()) {
    y.noalias() += x * b.w_skip;
    y.rowwise() += b.b_skip.row(0);
  } else {
    y += x;
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->inv_rms = std::move(inv_rms);
    cache->normed = std::move(normed);
    cache->h = std::move(h);
    cache->act = std::move(act);
  }
  return y;
}

template <typename T>
Tensor<T> block_backward(const Block<T>& b, const BlockCache<T>& c, const Tensor<T>& dy,
                         Block<T>& g) {
  g.w_out.noalias() += c.act.transpose() * dy;
  g.b_out += dy.colwise().sum();
  const Tensor<T> dact = dy * b.w_out.transpose();
  const Tensor<T> dh = swiglu_backward(c.h, dact);
  g.w_in.noalias() += c.normed.transpose() * dh;
  g.b_in += dh.colwise().sum();
  const Tensor<T> dnormed = dh * b.w_in.transpose();
  Tensor<T> dx = rmsnorm_backward(c.x, b.norm_gain, c.inv_rms, dnormed, &g.norm_gain);
  if (b.has_skip()) {
    dx.noalias() += dy * b.w_skip.transpose();
    g.w_skip.noalias() += c.x.transpose() * dy;
    g.b_skip += dy.colwise().sum();
  } else {
    dx += dy;
  }
  return dx;
}

}  // namespace

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, Column<T>* inv_rms) {
  require_cols(gain, x.cols(), "rmsnorm gain");
  const T d = static_cast<T>(x.cols());
  const T eps = static_cast<T>(kRmsNormEps);
  Column<T> r = ((x.rowwise().squaredNorm().array() / d) + eps).rsqrt().matrix();
  Tensor<T> y = (x.array().colwise() * r.array()).rowwise() * gain.row(0).array();
  if (inv_rms != nullptr) *inv_rms = std::move(r);
  return y;
}

template <typename T>
Tensor<T> rmsnorm_backward(const Tensor<T>& x, const Tensor<T>& gain, const Column<T>& inv_rms,
                           const Tensor<T>& grad_out, Tensor<T>* grad_gain) {
  const T d = static_cast<T>(x.cols());
  const Tensor<T> unit = x.array().colwise() * inv_rms.array();
  if (grad_gain != nullptr) *grad_gain += (grad_out.array() * unit.array()).colwise().sum().matrix();
  const Tensor<T> gdy = grad_out.array().rowwise() * gain.row(0).array();
  // d/dx_j of x_j r: r * gdy_j - x_j r^3 / d * sum_k gdy_k x_k
  const Column<T> dot = (gdy.array() * x.array()).rowwise().sum().matrix();
  const Column<T> coef = (inv_rms.array().cube() * dot.array() / d).matrix();
  Tensor<T> dx = (gdy.array().colwise() * inv_rms.array()) - (x.array().colwise() * coef.array());
  return dx;
}

template <typename T>
Tensor<T> swiglu(const Tensor<T>& h) {
  if (h.cols() % 2 != 0) throw Error("swiglu: input width must be even");
  const Eigen::Index m = h.cols() / 2;
  const auto a = h.leftCols(m).array();
  const auto b = h.rightCols(m).array();
  const auto sig = (T(1) + (-a).exp()).inverse();
  Tensor<T> out = (a * sig * b).matrix();
  return out;
}

template <typename T>
Tensor<T> swiglu_backward(const Tensor<T>& h, const Tensor<T>& grad_out) {
  if (h.cols() % 2 != 0) throw Error("swiglu: input width must be even");
  const Eigen::Index m = h.cols() / 2;
  require_cols(grad_out, m, "swiglu_backward grad");
  const auto a = h.leftCols(m).array();
  const auto b = h.rightCols(m).array();
  const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sig =
      (T(1) + (-a).exp()).inverse();
  const auto silu = a * sig;
  Tensor<T> dh(h.rows(), h.cols());
  dh.leftCols(m) = (grad_out.array() * b * (sig + silu * (T(1) - sig))).matrix();
  dh.rightCols(m) = (grad_out.array() * silu).matrix();
  return dh;
}

template <typename T>
Mlp<T>::Mlp(const MlpConfig& config) : config_(config) {
  if (config.blocks < 1 || config.input < 1 || config.output < 1 || config.ff < 1 ||
      (config.blocks > 1 && config.hidden < 1)) {
    throw Error("mlp: invalid architecture");
  }
  for (int i = 0; i < config.blocks; ++i) {
    const int in = i == 0 ? config.input : config.hidden;
    const int out = i == config.blocks - 1 ? config.output : config.hidden;
    blocks_.push_back(zero_block<T>(in, config.ff, out));
  }
}

template <typename T>
Mlp<T> Mlp<T>::init(const MlpConfig& config, Rng& rng) {
  Mlp m(config);
  for (auto& b : m.blocks_) {
    b.norm_gain.setOnes();
    b.w_in = uniform<T>(b.w_in.rows(), b.w_in.cols(), 1.0 / std::sqrt(double(b.w_in.rows())), rng);
    b.w_out =
        uniform<T>(b.w_out.rows(), b.w_out.cols(), 1.0 / std::sqrt(double(b.w_out.rows())), rng);
    if (b.has_skip()) {
      b.w_skip = uniform<T>(b.w_skip.rows(), b.w_skip.cols(),
                            1.0 / std::sqrt(double(b.w_skip.rows())), rng);
    }
  }
  return m;
}

template <typename T>
std::size_t Mlp<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const {
  require_cols(x, config_.input, "mlp forward");
  Tensor<T> h = x;
  for (const auto& b : blocks_) h = block_forward<T>(b, h, nullptr);
  return h;
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x, Cache& cache) const {
  require_cols(x, config_.input, "mlp forward");
  cache.owner = this;
  cache.generation = generation_;
  cache.blocks.resize(blocks_.size());
  Tensor<T> h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = block_forward<T>(blocks_[i], h, &cache.blocks[i]);
  return h;
}

template <typename T>
Tensor<T> Mlp<T>::backward(const Cache& cache, const Tensor<T>& grad_out, Mlp& grads) const {
  if (cache.owner != this || cache.generation != generation_ || cache.blocks.size() != blocks_.size()) {
    throw Error("mlp backward: stale or mismatched activation cache");
  }
  if (!(grads.config_ == config_)) throw Error("mlp backward: gradient buffer has wrong shape");
  require_cols(grad_out, config_.output, "mlp backward");
  if (grad_out.rows() != cache.blocks.front().x.rows()) {
    throw Error("mlp backward: batch size differs from cached forward");
  }
  ++grads.generation_;
  Tensor<T> g = grad_out;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    g = block_backward<T>(blocks_[i], cache.blocks[i], g, grads.blocks_[i]);
  }
  return g;
}

template <typename T>
void Mlp<T>::set_zero() {
  visit([](const std::string&, Tensor<T>& t) { t.setZero(); });
}

template <typename T>
std::vector<Tensor<T>*> Mlp<T>::parameters() {
  std::vector<Tensor<T>*> out;
  visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
void Adam<T>::step(const std::vector<Tensor<T>*>& params, const std::vector<const Tensor<T>*>& grads,
                   double lr) {
  if (params.size() != grads.size()) throw Error("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto* p : params) {
      m_.push_back(Tensor<T>::Zero(p->rows(), p->cols()));
      v_.push_back(Tensor<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("adam: parameter list changed between steps");
  ++steps_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const double c1 = 1.0 - std::pow(config_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, double(steps_));
  const T step = static_cast<T>(lr * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(config_.eps * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = *grads[i];
    if (g.rows() != params[i]->rows() || g.cols() != params[i]->cols()) {
      throw Error("adam: gradient shape mismatch");
    }
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.cwiseAbs2();
    params[i]->array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
}

template <typename T>
double squared_norm(const std::vector<const Tensor<T>*>& tensors) {
  double s = 0.0;
  for (const auto* t : tensors) s += static_cast<double>(t->squaredNorm());
  return s;
}

#define COUNTS_NN_INSTANTIATE(T)                                                              \
  template Tensor<T> rmsnorm<T>(const Tensor<T>&, const Tensor<T>&, Column<T>*);              \
  template Tensor<T> rmsnorm_backward<T>(const Tensor<T>&, const Tensor<T>&, const Column<T>&, \
                                         const Tensor<T>&, Tensor<T>*);                       \
  template Tensor<T> swiglu<T>(const Tensor<T>&);                                             \
  template Tensor<T> swiglu_backward<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template class Mlp<T>;                                                                      \
  template class Adam<T>;                                                                     \
  template double squared_norm<T>(const std::vector<const Tensor<T>*>&);

COUNTS_NN_INSTANTIATE(float)
COUNTS_NN_INSTANTIATE(double)

}  // namespace counts::nn
