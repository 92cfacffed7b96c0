#include "counts/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "counts/error.hpp"
#include "counts/rng.hpp"

namespace counts::corpus {

namespace {

constexpr std::pair<Kind, const char*> kKindNames[] = {
    {Kind::kSineMix, "sine-mix"},     {Kind::kTrendSeasonal, "trend-seasonal"},
    {Kind::kAr, "ar"},                {Kind::kRandomWalk, "random-walk"},
    {Kind::kSquareSawtooth, "square-sawtooth"}, {Kind::kSpikes, "spikes"}};

double uniform(Rng& rng, Range r) {
  if (r.lo == r.hi) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double log_uniform(Rng& rng, Range r) { return std::exp(uniform(rng, {std::log(r.lo), std::log(r.hi)})); }

void normalise(std::vector<double>& x) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : x) v /= peak;
}

std::vector<double> sine_mix(const GeneratorSpec& s, std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> comps(1, s.max_components);
  const int k = comps(rng);
  std::vector<double> amp(static_cast<std::size_t>(k)), per(amp.size()), phase(amp.size());
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    amp[static_cast<std::size_t>(c)] = uniform(rng, {0.2, 1.0});
    per[static_cast<std::size_t>(c)] = log_uniform(rng, s.period);
    phase[static_cast<std::size_t>(c)] = uniform(rng, {0.0, 2.0 * std::numbers::pi});
    total += amp[static_cast<std::size_t>(c)];
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t c = 0; c < amp.size(); ++c) {
      x[t] += amp[c] / total * std::sin(2.0 * std::numbers::pi * double(t) / per[c] + phase[c]);
    }
  }
  return x;  // |x| <= 1 by construction
}

std::vector<double> trend_seasonal(const GeneratorSpec& s, std::size_t n, Rng& rng) {
  const double slope = uniform(rng, {-1.0, 1.0});
  const double curve = uniform(rng, {-0.5, 0.5});
  const double season = uniform(rng, {0.05, 0.5});
  const double per = log_uniform(rng, s.period);
  const double phase = uniform(rng, {0.0, 2.0 * std::numbers::pi});
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double u = double(t) / double(n);
    x[t] = slope * u + curve * u * u + season * std::sin(2.0 * std::numbers::pi * double(t) / per + phase);
  }
  normalise(x);
  return x;
}

std::vector<double> autoregressive(const GeneratorSpec& s, std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> order(1, std::max(1, s.ar_max_order));
  const int p = order(rng);
  // Coefficients of prod_i (1 - r_i z): stationary for |r_i| < 1.
  std::vector<double> poly{1.0};
  for (int i = 0; i < p; ++i) {
    double r = uniform(rng, s.ar_root);
    if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) r = -r;
    std::vector<double> next(poly.size() + 1, 0.0);
    for (std::size_t j = 0; j < poly.size(); ++j) {
      next[j] += poly[j];
      next[j + 1] -= r * poly[j];
    }
    poly = std::move(next);
  }
  std::normal_distribution<double> eps(0.0, 1.0);
  const std::size_t burn = 200;
  std::vector<double> x(n + burn, 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double v = eps(rng);
    for (std::size_t j = 1; j < poly.size() && j <= t; ++j) v -= poly[j] * x[t - j];
    x[t] = v;
  }
  x.erase(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(burn));
  normalise(x);
  return x;
}

std::vector<double> random_walk(const GeneratorSpec&, std::size_t n, Rng& rng) {
  std::normal_distribution<double> step(0.0, 1.0);
  const double drift = uniform(rng, {-0.05, 0.05});
  std::vector<double> x(n);
  double v = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    v += drift + step(rng);
    x[t] = v;
  }
  normalise(x);
  return x;
}

std::vector<double> square_sawtooth(const GeneratorSpec& s, std::size_t n, Rng& rng) {
  const bool square = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
  const double per = log_uniform(rng, s.period);
  const double duty = uniform(rng, {0.2, 0.8});
  const double phase = uniform(rng, {0.0, 1.0});
  std::vector<double> x(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double u = std::fmod(double(t) / per + phase, 1.0);
    x[t] = square ? (u < duty ? 1.0 : -1.0) : 2.0 * u - 1.0;
  }
  return x;
}

std::vector<double> spikes(const GeneratorSpec& s, std::size_t n, Rng& rng) {
  const double rate = uniform(rng, s.spike_rate);
  const double base = uniform(rng, {0.05, 0.3});
  std::bernoulli_distribution hit(rate);
  std::vector<double> x(n, 0.0);
  std::normal_distribution<double> wiggle(0.0, 0.02);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = base + wiggle(rng);
    if (hit(rng)) x[t] += uniform(rng, {0.5, 1.0}) * (std::uniform_int_distribution<int>(0, 3)(rng) == 0 ? -1.0 : 1.0);
  }
  normalise(x);
  return x;
}

bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s.empty() || s == "nan" || s == "NaN" || s == "NA" || s == "null") {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto c = line.find(',', start);
    out.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
    if (c == std::string_view::npos) break;
    start = c + 1;
  }
  return out;
}

ts::Series finish(ts::Series s, NanPolicy policy, std::size_t line) {
  try {
    s.values = apply_nan_policy(std::move(s.values), policy);
  } catch (const Error& e) {
    throw ParseError("series '" + s.id + "': " + e.what(), line);
  }
  return s;
}

}  // namespace

std::string to_string(Kind k) {
  for (auto [kind, name] : kKindNames)
    if (kind == k) return name;
  return "unknown";
}

Kind kind_from_string(const std::string& s) {
  for (auto [kind, name] : kKindNames)
    if (s == name) return kind;
  throw Error("unknown generator kind '" + s + "'");
}

void GeneratorSpec::validate() const {
  auto check = [](Range r, const char* what, bool positive) {
    if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi) || (positive && r.lo <= 0.0)) {
      throw Error(std::string("generator spec: invalid range for ") + what);
    }
  };
  if (kinds.empty()) throw Error("generator spec: no kinds");
  double total = 0.0;
  for (const auto& [k, w] : kinds) {
    if (!(w >= 0.0)) throw Error("generator spec: negative kind weight");
    total += w;
  }
  if (total <= 0.0) throw Error("generator spec: kind weights sum to zero");
  check(length, "length", true);
  check(log10_amplitude, "log10_amplitude", false);
  check(offset, "offset", false);
  check(noise, "noise", false);
  if (noise.lo < 0.0) throw Error("generator spec: invalid range for noise");
  check(period, "period", true);
  check(ar_root, "ar_root", false);
  if (ar_root.lo < 0.0 || ar_root.hi >= 1.0) throw Error("generator spec: ar_root must lie in [0, 1)");
  check(spike_rate, "spike_rate", false);
  if (spike_rate.lo < 0.0 || spike_rate.hi > 1.0) throw Error("generator spec: invalid range for spike_rate");
  if (max_components < 1 || ar_max_order < 1) throw Error("generator spec: counts must be positive");
}

nlohmann::json to_json(const GeneratorSpec& s) {
  nlohmann::json kinds = nlohmann::json::object();
  for (const auto& [k, w] : s.kinds) kinds[to_string(k)] = w;
  auto r = [](Range x) { return nlohmann::json::array({x.lo, x.hi}); };
  return {{"kinds", kinds},
          {"length", r(s.length)},
          {"log10_amplitude", r(s.log10_amplitude)},
          {"offset", r(s.offset)},
          {"noise", r(s.noise)},
          {"period", r(s.period)},
          {"max_components", s.max_components},
          {"ar_max_order", s.ar_max_order},
          {"ar_root", r(s.ar_root)},
          {"spike_rate", r(s.spike_rate)},
          {"seed", s.seed}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  auto r = [&](const char* key, Range& out) {
    if (!j.contains(key)) return;
    const auto& a = j.at(key);
    if (!a.is_array() || a.size() != 2) throw Error(std::string("generator spec: '") + key + "' must be [lo, hi]");
    out = {a[0].get<double>(), a[1].get<double>()};
  };
  if (j.contains("kinds")) {
    s.kinds.clear();
    for (const auto& [name, w] : j.at("kinds").items()) s.kinds.emplace_back(kind_from_string(name), w.get<double>());
  }
  r("length", s.length);
  r("log10_amplitude", s.log10_amplitude);
  r("offset", s.offset);
  r("noise", s.noise);
  r("period", s.period);
  r("ar_root", s.ar_root);
  r("spike_rate", s.spike_rate);
  s.max_components = j.value("max_components", s.max_components);
  s.ar_max_order = j.value("ar_max_order", s.ar_max_order);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

ts::Series generate_one(const GeneratorSpec& spec, std::size_t index) {
  Rng rng = derive_rng(spec.seed, {0x67656eULL, index});
  // Canonical kind order, so the spec's listing order does not matter.
  auto kinds = spec.kinds;
  std::stable_sort(kinds.begin(), kinds.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<double> weights;
  for (const auto& kw : kinds) weights.push_back(kw.second);
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
  Kind kind = kinds.back().first;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (pick < weights[i]) {
      kind = kinds[i].first;
      break;
    }
    pick -= weights[i];
  }
  const auto n = static_cast<std::size_t>(
      std::uniform_int_distribution<long long>(static_cast<long long>(spec.length.lo),
                                               static_cast<long long>(spec.length.hi))(rng));
  const double amplitude = std::pow(10.0, uniform(rng, spec.log10_amplitude));
  const double offset = uniform(rng, spec.offset);
  const double noise = uniform(rng, spec.noise);

  std::vector<double> shape;
  switch (kind) {
    case Kind::kSineMix: shape = sine_mix(spec, n, rng); break;
    case Kind::kTrendSeasonal: shape = trend_seasonal(spec, n, rng); break;
    case Kind::kAr: shape = autoregressive(spec, n, rng); break;
    case Kind::kRandomWalk: shape = random_walk(spec, n, rng); break;
    case Kind::kSquareSawtooth: shape = square_sawtooth(spec, n, rng); break;
    case Kind::kSpikes: shape = spikes(spec, n, rng); break;
  }
  ts::Series s;
  s.id = "syn-" + std::to_string(index);
  s.values.resize(n);
  std::normal_distribution<double> eps(0.0, 1.0);
  for (std::size_t t = 0; t < n; ++t) {
    double v = offset + shape[t];
    if (noise > 0.0) v += noise * eps(rng);
    s.values[t] = amplitude * v;
  }
  s.meta["kind"] = to_string(kind);
  return s;
}

std::vector<ts::Series> generate(const GeneratorSpec& spec, std::size_t n) {
  spec.validate();
  std::vector<ts::Series> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(spec, i));
  return out;
}

// ---------------------------------------------------------------------------

Format format_from_string(const std::string& s) {
  if (s == "jsonl") return Format::kJsonl;
  if (s == "csv") return Format::kCsv;
  if (s == "csv-column") return Format::kCsvColumn;
  throw Error("unknown series format '" + s + "'");
}

Format format_from_path(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".jsonl" || ext == ".json") return Format::kJsonl;
  if (ext == ".csv") return Format::kCsv;
  throw Error("cannot infer series format from '" + p.string() + "'");
}

std::vector<double> apply_nan_policy(std::vector<double> values, NanPolicy policy) {
  for (double v : values)
    if (std::isinf(v)) throw Error("infinite value");
  const bool any_finite = std::any_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  if (!any_finite) throw Error("all values are NaN");
  if (policy == NanPolicy::kDrop) {
    std::erase_if(values, [](double v) { return std::isnan(v); });
    return values;
  }
  const std::size_t n = values.size();
  std::size_t prev = n;  // last finite index
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(values[i])) continue;
    if (prev == n) {
      for (std::size_t j = 0; j < i; ++j) values[j] = values[i];
    } else if (i > prev + 1) {
      const double a = values[prev], b = values[i];
      for (std::size_t j = prev + 1; j < i; ++j) values[j] = a + (b - a) * double(j - prev) / double(i - prev);
    }
    prev = i;
  }
  for (std::size_t j = prev + 1; j < n; ++j) values[j] = values[prev];
  return values;
}

std::vector<ts::Series> ingest(const std::filesystem::path& path, Format format, NanPolicy policy) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<ts::Series> out;
  std::string line;
  std::size_t lineno = 0;

  if (format == Format::kJsonl) {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
      }
      if (!j.is_object() || !j.contains("values") || !j["values"].is_array()) {
        throw ParseError("expected an object with a 'values' array", lineno);
      }
      ts::Series s;
      s.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : "line-" + std::to_string(lineno);
      for (const auto& v : j["values"]) {
        if (v.is_number()) {
          s.values.push_back(v.get<double>());
        } else if (v.is_null()) {
          s.values.push_back(std::numeric_limits<double>::quiet_NaN());
        } else if (v.is_string()) {
          double d = 0.0;
          if (!parse_double(v.get<std::string>(), d)) throw ParseError("non-numeric value " + v.dump(), lineno);
          s.values.push_back(d);
        } else {
          throw ParseError("non-numeric value " + v.dump(), lineno);
        }
      }
      if (s.values.empty()) throw ParseError("series '" + s.id + "' has no values", lineno);
      if (j.contains("meta") && j["meta"].is_object()) {
        for (const auto& [k, v] : j["meta"].items()) s.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      out.push_back(finish(std::move(s), policy, lineno));
    }
  } else if (format == Format::kCsv) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto fields = split_fields(line);
      ts::Series s;
      std::size_t first = 0;
      double d = 0.0;
      if (!parse_double(fields[0], d)) {
        s.id = std::string(fields[0]);
        first = 1;
      } else {
        s.id = "row-" + std::to_string(out.size());
      }
      for (std::size_t i = first; i < fields.size(); ++i) {
        if (!parse_double(fields[i], d)) {
          throw ParseError("non-numeric field '" + std::string(fields[i]) + "'", lineno);
        }
        s.values.push_back(d);
      }
      if (s.values.empty()) throw ParseError("row has no values", lineno);
      out.push_back(finish(std::move(s), policy, lineno));
    }
  } else {
    ts::Series s;
    s.id = path.stem().string();
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      double d = 0.0;
      if (!parse_double(line, d)) {
        if (s.values.empty() && lineno == 1) continue;  // header
        throw ParseError("non-numeric value '" + line + "'", lineno);
      }
      s.values.push_back(d);
    }
    if (s.values.empty()) throw ParseError("no values", lineno);
    out.push_back(finish(std::move(s), policy, lineno));
  }
  return out;
}

std::string to_jsonl_line(const ts::Series& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["values"] = s.values;
  if (!s.meta.empty()) j["meta"] = s.meta;
  return j.dump();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ts::Series>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  for (const auto& s : series) out << to_jsonl_line(s) << '\n';
  if (!out) throw Error("write failed: '" + path.string() + "'");
}

Split split(const std::vector<ts::Series>& corpus, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("split: ratio must be in [0, 1]");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = derive_rng(seed, {0x73706cULL});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * double(corpus.size())));
  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> va(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  Split s;
  for (auto i : tr) s.train.push_back(corpus[i]);
  for (auto i : va) s.val.push_back(corpus[i]);
  return s;
}

}  // namespace counts::corpus
