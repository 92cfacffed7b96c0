#include "counts/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "counts/log.hpp"
#include "counts/rewards.hpp"

namespace counts::train {

namespace {

enum StreamKey : std::uint64_t { kModelKey = 1, kInitKey, kBaselineKey, kEpochKey, kExpireKey };

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Estimator e) { return e == Estimator::kRotation ? "rotation" : "straight-through"; }

Estimator estimator_from_string(const std::string& s) {
  if (s == "straight-through" || s == "ste") return Estimator::kStraightThrough;
  if (s == "rotation") return Estimator::kRotation;
  throw Error("unknown gradient estimator '" + s + "'");
}

std::string to_string(CodebookInit c) { return c == CodebookInit::kRandom ? "random" : "kmeans"; }

CodebookInit codebook_init_from_string(const std::string& s) {
  if (s == "kmeans" || s == "k-means") return CodebookInit::kKMeans;
  if (s == "random") return CodebookInit::kRandom;
  throw Error("unknown codebook init '" + s + "'");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("train config: ") + what);
  };
  require(batch_size >= 1, "batch_size must be >= 1");
  require(epochs >= 0, "epochs must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(final_lr_ratio >= 0.0 && final_lr_ratio <= 1.0, "final_lr_ratio must be in [0, 1]");
  require(beta >= 0.0 && std::isfinite(beta), "beta must be >= 0");
  require(ema_decay > 0.0 && ema_decay < 1.0, "ema_decay must be in (0, 1)");
  require(dead_code_threshold >= 1, "dead_code_threshold must be >= 1");
  require(kmeans_samples >= 1, "kmeans_samples must be >= 1");
  require(kmeans_iters >= 0, "kmeans_iters must be >= 0");
  require(grad_clip >= 0.0, "grad_clip must be >= 0");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(model.levels >= 1 && model.codebook_size >= 1 && model.embed_dim >= 1, "bad model shape");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"final_lr_ratio", c.final_lr_ratio},
          {"beta", c.beta},
          {"ema_decay", c.ema_decay},
          {"dead_code_threshold", c.dead_code_threshold},
          {"expire_dead_codes", c.expire_dead_codes},
          {"estimator", to_string(c.estimator)},
          {"codebook_init", to_string(c.codebook_init)},
          {"kmeans_samples", c.kmeans_samples},
          {"kmeans_iters", c.kmeans_iters},
          {"grad_clip", c.grad_clip},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"model", tok::to_json(c.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("train config: expected a JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "lr") c.lr = v.get<double>();
    else if (key == "warmup_steps") c.warmup_steps = v.get<int>();
    else if (key == "final_lr_ratio") c.final_lr_ratio = v.get<double>();
    else if (key == "beta") c.beta = v.get<double>();
    else if (key == "ema_decay") c.ema_decay = v.get<double>();
    else if (key == "dead_code_threshold") c.dead_code_threshold = v.get<int>();
    else if (key == "expire_dead_codes") c.expire_dead_codes = v.get<bool>();
    else if (key == "estimator") c.estimator = estimator_from_string(v.get<std::string>());
    else if (key == "codebook_init") c.codebook_init = codebook_init_from_string(v.get<std::string>());
    else if (key == "kmeans_samples") c.kmeans_samples = v.get<int>();
    else if (key == "kmeans_iters") c.kmeans_iters = v.get<int>();
    else if (key == "grad_clip") c.grad_clip = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = v.get<int>();
    else if (key == "model") c.model = tok::tokenizer_config_from_json(v);
    else throw Error("train config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::vector<double> gradient_estimator(std::span<const double> e, std::span<const double> q,
                                       std::span<const double> grad_q, Estimator mode, bool* fallback) {
  if (e.size() != q.size() || e.size() != grad_q.size()) throw Error("gradient_estimator: length mismatch");
  std::vector<double> g(grad_q.begin(), grad_q.end());
  if (fallback) *fallback = false;
  if (mode == Estimator::kStraightThrough) return g;

  double ne = 0.0, nq = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    ne += e[i] * e[i];
    nq += q[i] * q[i];
  }
  ne = std::sqrt(ne);
  nq = std::sqrt(nq);
  if (!(ne > 1e-12) || !(nq > 1e-12)) {
    if (fallback) *fallback = true;
    return g;
  }
  double cos = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) cos += (e[i] / ne) * (q[i] / nq);
  if (1.0 + cos < 1e-6) {
    if (fallback) *fallback = true;
    return g;
  }
  // r = (e^ + q^) / |e^ + q^|;  R^T g = g - 2 r (r.g) + 2 e^ (q^.g)
  const double nr = std::sqrt(2.0 + 2.0 * cos);
  double rg = 0.0, qg = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    rg += (e[i] / ne + q[i] / nq) / nr * grad_q[i];
    qg += q[i] / nq * grad_q[i];
  }
  const double scale = nq / ne;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double r = (e[i] / ne + q[i] / nq) / nr;
    g[i] = scale * (grad_q[i] - 2.0 * r * rg + 2.0 * e[i] / ne * qg);
  }
  return g;
}

int gradient_estimator(const rvq::Matrix& e, const rvq::Matrix& q, const rvq::Matrix& grad_q, Estimator mode,
                       rvq::Matrix& grad_e) {
  if (e.rows() != q.rows() || e.rows() != grad_q.rows() || e.cols() != q.cols() || e.cols() != grad_q.cols()) {
    throw Error("gradient_estimator: shape mismatch");
  }
  if (mode == Estimator::kStraightThrough) {
    grad_e = grad_q;
    return 0;
  }
  grad_e.resize(e.rows(), e.cols());
  int fallbacks = 0;
  const auto d = static_cast<std::size_t>(e.cols());
  std::vector<double> er(d), qr(d), gr(d);
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      er[j] = e(i, jj);
      qr[j] = q(i, jj);
      gr[j] = grad_q(i, jj);
    }
    bool fb = false;
    const auto out = gradient_estimator(er, qr, gr, mode, &fb);
    fallbacks += fb ? 1 : 0;
    for (std::size_t j = 0; j < d; ++j) grad_e(i, static_cast<Eigen::Index>(j)) = static_cast<float>(out[j]);
  }
  return fallbacks;
}

// ---------------------------------------------------------------------------

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step},         {"lr", lr},           {"recon", recon},
          {"commit", commit},     {"total", total},     {"grad_norm", grad_norm},
          {"utilization", utilization}, {"perplexity", perplexity}, {"expired", expired},
          {"fallbacks", fallbacks}};
}

Trainer::Trainer(tok::TokenizerModel& model, TrainConfig config)
    : model_(model), config_(std::move(config)) {
  config_.validate();
  if (!(model_.config == config_.model)) throw Error("trainer: model architecture does not match config");
  enc_grad_ = model_.encoder.zeros_like();
  dec_grad_ = model_.decoder.zeros_like();
}

void Trainer::init_codebooks(const rvq::Matrix& samples) {
  const rvq::Matrix emb = model_.encoder.forward(samples);
  Rng rng = derive_rng(config_.seed, {kInitKey});
  if (config_.codebook_init == CodebookInit::kKMeans) {
    rvq::kmeans_init(model_.rvq, emb, rng, config_.kmeans_iters);
  } else {
    rvq::random_init(model_.rvq, emb, rng);
  }
}

double Trainer::learning_rate(std::int64_t step) const {
  const double lr = config_.lr;
  if (step < config_.warmup_steps) return lr * double(step + 1) / double(config_.warmup_steps);
  const double span = double(std::max<std::int64_t>(1, total_steps_ - config_.warmup_steps));
  const double t = std::clamp(double(step - config_.warmup_steps) / span, 0.0, 1.0);
  const double r = config_.final_lr_ratio;
  return lr * (r + (1.0 - r) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

std::vector<nn::Tensor<float>*> Trainer::parameters() {
  auto params = model_.encoder.parameters();
  const auto dec = model_.decoder.parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  for (const auto& book : model_.rvq.codebooks()) {
    for (const auto* p : params) {
      if (p->data() == book.vectors.data()) throw Error("trainer: codebook vectors must not be optimizer parameters");
    }
  }
  return params;
}

StepMetrics Trainer::train_step(const rvq::Matrix& batch, StepTrace* trace) {
  if (!model_.ready()) throw Error("train_step: codebooks are not initialized");
  if (batch.rows() == 0 || batch.cols() != static_cast<Eigen::Index>(ts::kPatchLength)) {
    throw Error("train_step: batch must be non-empty with 64 columns");
  }
  StepMetrics m;
  m.lr = learning_rate(step_);
  if (trace) trace->rvq_before = model_.rvq;

  nn::Mlp<float>::Cache enc_cache, dec_cache;
  const rvq::Matrix e = model_.encoder.forward(batch, enc_cache);
  rvq::BatchCodes codes = model_.rvq.quantize(e);
  const rvq::Matrix& q = codes.quantized;
  const rvq::Matrix recon = model_.decoder.forward(q, dec_cache);

  const rvq::Matrix diff = recon - batch;
  const rvq::Matrix ediff = e - q;
  const double n_recon = double(diff.size());
  const double n_commit = double(ediff.size());
  m.recon = diff.cast<double>().squaredNorm() / n_recon;
  m.commit = ediff.cast<double>().squaredNorm() / n_commit;
  m.total = m.recon + config_.beta * m.commit;
  if (!std::isfinite(m.total)) {
    nlohmann::json dump = {{"step", step_},
                           {"lr", m.lr},
                           {"recon", num(m.recon)},
                           {"commit", num(m.commit)},
                           {"batch_rows", batch.rows()},
                           {"max_abs_input", batch.cwiseAbs().maxCoeff()},
                           {"embedding_finite", e.allFinite()},
                           {"recon_finite", recon.allFinite()}};
    throw DivergedError("training diverged at step " + std::to_string(step_ + 1) + ": non-finite loss", dump);
  }

  enc_grad_.set_zero();
  dec_grad_.set_zero();
  const rvq::Matrix grad_recon = diff * static_cast<float>(2.0 / n_recon);
  const rvq::Matrix grad_q = model_.decoder.backward(dec_cache, grad_recon, dec_grad_);
  rvq::Matrix grad_e;
  m.fallbacks = gradient_estimator(e, q, grad_q, config_.estimator, grad_e);
  if (trace) trace->grad_estimated = grad_e;
  grad_e += ediff * static_cast<float>(2.0 * config_.beta / n_commit);
  model_.encoder.backward(enc_cache, grad_e, enc_grad_);

  auto grads_mut = enc_grad_.parameters();
  const auto dg = dec_grad_.parameters();
  grads_mut.insert(grads_mut.end(), dg.begin(), dg.end());
  std::vector<const nn::Tensor<float>*> grads(grads_mut.begin(), grads_mut.end());
  m.grad_norm = std::sqrt(nn::squared_norm(grads));
  if (!std::isfinite(m.grad_norm)) {
    throw DivergedError("training diverged at step " + std::to_string(step_ + 1) + ": non-finite gradient",
                        {{"step", step_}, {"recon", m.recon}, {"commit", m.commit}});
  }
  if (config_.grad_clip > 0.0 && m.grad_norm > config_.grad_clip) {
    const auto s = static_cast<float>(config_.grad_clip / m.grad_norm);
    for (auto* g : grads_mut) *g *= s;
  }
  adam_.step(parameters(), grads, m.lr);

  for (int l = 0; l < model_.rvq.levels(); ++l) {
    std::vector<std::int64_t> counts(static_cast<std::size_t>(model_.rvq.codebook_size()), 0);
    for (int i = 0; i < codes.rows(); ++i) ++counts[static_cast<std::size_t>(codes.index(i, l))];
    const auto u = rvq::usage_stats(counts);
    m.utilization.push_back(u.utilization_pct);
    m.perplexity.push_back(u.perplexity);
  }
  rvq::ema_update(model_.rvq, codes, config_.ema_decay);
  if (config_.expire_dead_codes) {
    Rng rng = derive_rng(config_.seed, {kExpireKey, static_cast<std::uint64_t>(step_)});
    m.expired = rvq::expire_dead_codes(model_.rvq, codes, config_.dead_code_threshold, rng);
  }

  if (trace) {
    trace->embeddings = e;
    trace->quantized = q;
    trace->recon = recon;
    trace->grad_quantized = grad_q;
    trace->grad_embedding = grad_e;
    trace->codes = std::move(codes);
  }
  m.step = ++step_;
  return m;
}

void Trainer::save_state(ckpt::Container& c) const {
  c.manifest["trainer"] = {{"step", step_}, {"adam_steps", adam_.steps()}, {"config", to_json(config_)}};
  const auto& m = adam_.first_moments();
  const auto& v = adam_.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    c.put("adam.m." + std::to_string(i), m[i]);
    c.put("adam.v." + std::to_string(i), v[i]);
  }
}

void Trainer::load_state(const ckpt::Container& c) {
  if (!c.manifest.contains("trainer")) throw Error("checkpoint has no trainer state");
  const auto& t = c.manifest["trainer"];
  step_ = t.at("step").get<std::int64_t>();
  const auto adam_steps = t.at("adam_steps").get<std::int64_t>();
  adam_ = nn::Adam<float>();
  adam_.set_steps(adam_steps);
  if (adam_steps > 0) {
    auto params = parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      nn::Tensor<float> m(params[i]->rows(), params[i]->cols());
      nn::Tensor<float> v(params[i]->rows(), params[i]->cols());
      c.read_into("adam.m." + std::to_string(i), m);
      c.read_into("adam.v." + std::to_string(i), v);
      adam_.first_moments().push_back(std::move(m));
      adam_.second_moments().push_back(std::move(v));
    }
  }
}

// ---------------------------------------------------------------------------

nlohmann::json EvalMetrics::to_json() const {
  nlohmann::json util = nlohmann::json::array(), ppl = nlohmann::json::array();
  for (const auto& l : levels) {
    util.push_back(l.utilization_pct);
    ppl.push_back(l.perplexity);
  }
  return {{"recon_mse", recon_mse}, {"smape", smape}, {"utilization", util}, {"perplexity", ppl},
          {"patches", patches}};
}

namespace {

EvalMetrics eval_from_json(const nlohmann::json& j) {
  EvalMetrics e;
  e.recon_mse = j.at("recon_mse").get<double>();
  e.smape = j.at("smape").get<double>();
  e.patches = j.at("patches").get<std::int64_t>();
  const auto& u = j.at("utilization");
  const auto& p = j.at("perplexity");
  for (std::size_t i = 0; i < u.size(); ++i) e.levels.push_back({u[i].get<double>(), p[i].get<double>()});
  return e;
}

}  // namespace

std::vector<EvalPatch> eval_patches(const std::vector<ts::Series>& series) {
  std::vector<EvalPatch> out;
  for (const auto& s : series) {
    ts::validate(s);
    auto patches = ts::patchify(s);
    const int pad = static_cast<int>(ts::pad_count(s.values.size()));
    for (std::size_t i = 0; i < patches.size(); ++i) {
      EvalPatch p{std::move(patches[i]), static_cast<int>(ts::kPatchLength)};
      if (i + 1 == patches.size()) p.valid -= pad;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<ts::Patch> train_patches(const std::vector<ts::Series>& series) {
  std::vector<ts::Patch> out;
  for (const auto& s : series) {
    ts::validate(s);
    auto p = ts::patchify(s);
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return out;
}

EvalMetrics evaluate(const tok::TokenizerModel& model, const std::vector<EvalPatch>& patches, int batch_size) {
  if (!model.ready()) throw Error("evaluate: codebooks are not initialized");
  if (patches.empty()) throw Error("evaluate: no validation patches");
  if (batch_size < 1) throw Error("evaluate: batch_size must be >= 1");
  rvq::UsageCounter usage(model.rvq.levels(), model.rvq.codebook_size());
  double sq = 0.0, smape_sum = 0.0;
  std::vector<ts::Patch> chunk;
  std::vector<double> truth, approx;
  for (std::size_t start = 0; start < patches.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(patches.size(), start + static_cast<std::size_t>(batch_size));
    chunk.clear();
    for (std::size_t i = start; i < end; ++i) chunk.push_back(patches[i].patch);
    const tok::PatchBatch b = tok::to_batch(chunk);
    const auto codes = model.rvq.quantize(model.encoder.forward(b.scaled));
    usage.add(codes);
    const rvq::Matrix recon = model.decoder.forward(codes.quantized);
    sq += (recon - b.scaled).cast<double>().squaredNorm();
    for (std::size_t i = start; i < end; ++i) {
      const auto r = static_cast<Eigen::Index>(i - start);
      const auto& p = patches[i];
      truth.assign(p.patch.samples.begin(), p.patch.samples.begin() + p.valid);
      approx.resize(static_cast<std::size_t>(p.valid));
      for (int j = 0; j < p.valid; ++j) {
        approx[static_cast<std::size_t>(j)] = std::ldexp(static_cast<double>(recon(r, j)), p.patch.scale_exp);
      }
      smape_sum += rewards::smape(truth, approx);
    }
  }
  EvalMetrics m;
  m.patches = static_cast<std::int64_t>(patches.size());
  m.recon_mse = sq / (double(patches.size()) * double(ts::kPatchLength));
  m.smape = smape_sum / double(patches.size());
  for (int l = 0; l < model.rvq.levels(); ++l) m.levels.push_back(usage.level(l));
  return m;
}

nlohmann::json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"step", step},
          {"lr", lr},
          {"train_recon", train_recon},
          {"train_commit", train_commit},
          {"train_total", train_total},
          {"expired", expired},
          {"val", val.to_json()}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.step = j.at("step").get<std::int64_t>();
  r.lr = j.at("lr").get<double>();
  r.train_recon = j.at("train_recon").get<double>();
  r.train_commit = j.at("train_commit").get<double>();
  r.train_total = j.at("train_total").get<double>();
  r.expired = j.at("expired").get<int>();
  r.val = eval_from_json(j.at("val"));
  return r;
}

tok::TokenizerModel initial_model(const TrainConfig& config) {
  Rng rng = derive_rng(config.seed, {kModelKey});
  return tok::TokenizerModel::create(config.model, rng);
}

namespace {

void write_metrics(const std::filesystem::path& dir, const FitResult& r) {
  {
    std::ofstream out(dir / "metrics.jsonl", std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "metrics.jsonl").string());
    for (const auto& e : r.history) out << e.to_json().dump() << '\n';
  }
  std::ofstream out(dir / "metrics.csv", std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "metrics.csv").string());
  const std::size_t levels = r.history.empty() ? 0 : r.history.front().val.levels.size();
  out << "epoch,step,lr,train_recon,train_commit,train_total,expired,val_mse,val_smape";
  for (std::size_t l = 0; l < levels; ++l) out << ",util_" << l;
  for (std::size_t l = 0; l < levels; ++l) out << ",ppl_" << l;
  out << '\n';
  for (const auto& e : r.history) {
    out << e.epoch << ',' << e.step << ',' << num(e.lr) << ',' << num(e.train_recon) << ','
        << num(e.train_commit) << ',' << num(e.train_total) << ',' << e.expired << ',' << num(e.val.recon_mse)
        << ',' << num(e.val.smape);
    for (const auto& l : e.val.levels) out << ',' << num(l.utilization_pct);
    for (const auto& l : e.val.levels) out << ',' << num(l.perplexity);
    out << '\n';
  }
}

nlohmann::json fit_state(const FitResult& r, int epoch) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : r.history) hist.push_back(e.to_json());
  return {{"epoch", epoch},
          {"baseline", r.baseline.to_json()},
          {"history", hist},
          {"best_epoch", r.best_epoch},
          {"best", r.best_epoch > 0 ? r.best.to_json() : nlohmann::json()}};
}

}  // namespace

FitResult fit(tok::TokenizerModel& model, const std::vector<ts::Series>& train,
              const std::vector<ts::Series>& val, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  const auto patches = train_patches(train);
  const auto val_patches = eval_patches(val);
  if (patches.empty()) throw Error("fit: training split is empty");
  if (val_patches.empty()) throw Error("fit: validation split is empty");

  const bool persist = !options.out_dir.empty();
  if (persist) std::filesystem::create_directories(options.out_dir);
  const auto last_path = options.out_dir / "last.ckpt";

  const auto n = static_cast<std::int64_t>(patches.size());
  const std::int64_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;

  FitResult result;
  int start_epoch = 1;
  ckpt::Container resumed;
  const bool resuming = persist && options.resume && std::filesystem::exists(last_path);
  if (resuming) {
    resumed = ckpt::read_file(last_path);
    model = tok::from_container(resumed);
    const auto& f = resumed.manifest.at("fit");
    start_epoch = f.at("epoch").get<int>() + 1;
    result.baseline = eval_from_json(f.at("baseline"));
    for (const auto& e : f.at("history")) result.history.push_back(EpochRecord::from_json(e));
    result.best_epoch = f.at("best_epoch").get<int>();
    if (result.best_epoch > 0) result.best = eval_from_json(f.at("best"));
    log::info("resuming after epoch " + std::to_string(start_epoch - 1));
  }

  Trainer trainer(model, config);
  trainer.set_total_steps(steps_per_epoch * config.epochs);
  if (resuming) {
    trainer.load_state(resumed);
  } else {
    std::vector<std::size_t> idx(patches.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = derive_rng(config.seed, {kInitKey, 0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), static_cast<std::size_t>(config.kmeans_samples)));
    std::sort(idx.begin(), idx.end());
    std::vector<ts::Patch> sample;
    for (auto i : idx) sample.push_back(patches[i]);
    const tok::PatchBatch sb = tok::to_batch(sample);

    tok::TokenizerModel untrained = model;
    Rng brng = derive_rng(config.seed, {kBaselineKey});
    rvq::random_init(untrained.rvq, untrained.encoder.forward(sb.scaled), brng);
    result.baseline = evaluate(untrained, val_patches);
    log::info("untrained baseline: val mse " + num(result.baseline.recon_mse) + ", smape " +
              num(result.baseline.smape));

    trainer.init_codebooks(sb.scaled);
    log::info("codebooks initialised (" + to_string(config.codebook_init) + ") from " +
              std::to_string(sample.size()) + " patches");
  }

  rvq::Matrix batch(config.batch_size, static_cast<Eigen::Index>(ts::kPatchLength));
  for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = derive_rng(config.seed, {kEpochKey, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), rng);

    EpochRecord rec;
    rec.epoch = epoch;
    double recon_sum = 0.0, commit_sum = 0.0, total_sum = 0.0;
    std::int64_t steps = 0;
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      const std::int64_t lo = s * config.batch_size;
      const std::int64_t hi = std::min(n, lo + config.batch_size);
      batch.resize(hi - lo, static_cast<Eigen::Index>(ts::kPatchLength));
      for (std::int64_t i = lo; i < hi; ++i) {
        const auto& p = patches[order[static_cast<std::size_t>(i)]];
        for (std::size_t j = 0; j < ts::kPatchLength; ++j) {
          batch(i - lo, static_cast<Eigen::Index>(j)) = static_cast<float>(p.scaled[j]);
        }
      }
      StepMetrics m;
      try {
        m = trainer.train_step(batch);
      } catch (const DivergedError& e) {
        if (persist) {
          std::ofstream out(options.out_dir / "diverged.json");
          out << e.dump().dump(2) << '\n';
        }
        throw;
      }
      recon_sum += m.recon;
      commit_sum += m.commit;
      total_sum += m.total;
      rec.expired += m.expired;
      rec.lr = m.lr;
      ++steps;
      if (options.log_every > 0 && m.step % options.log_every == 0) {
        log::info("step " + std::to_string(m.step) + " recon " + num(m.recon) + " commit " + num(m.commit) +
                  " util0 " + num(m.utilization.front()));
      }
    }
    rec.step = trainer.step();
    rec.train_recon = recon_sum / double(steps);
    rec.train_commit = commit_sum / double(steps);
    rec.train_total = total_sum / double(steps);
    rec.val = evaluate(model, val_patches);
    result.history.push_back(rec);

    std::string util;
    for (const auto& l : rec.val.levels) util += " " + num(l.utilization_pct);
    log::info("epoch " + std::to_string(epoch) + " val mse " + num(rec.val.recon_mse) + " smape " +
              num(rec.val.smape) + " util" + util);

    const bool best = result.best_epoch == 0 || rec.val.recon_mse < result.best.recon_mse;
    if (best) {
      result.best_epoch = epoch;
      result.best = rec.val;
    }
    if (persist) {
      write_metrics(options.out_dir, result);
      ckpt::Container c = tok::to_container(model);
      c.manifest["fit"] = fit_state(result, epoch);
      if (best) ckpt::write_file(options.out_dir / "best.ckpt", c);
      const bool periodic = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
      if (periodic || epoch == config.epochs) {
        trainer.save_state(c);
        ckpt::write_file(last_path, c);
      }
    }
    if (options.stop_after_epoch && *options.stop_after_epoch == epoch) break;
  }
  if (persist && result.history.empty()) write_metrics(options.out_dir, result);
  return result;
}

}  // namespace counts::train
