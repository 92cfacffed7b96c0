#include "counts/ts_core.hpp"

#include <algorithm>
#include <cmath>

#include "counts/error.hpp"

namespace counts::ts {

void validate(const Series& series) {
  if (series.values.empty()) throw Error("series '" + series.id + "': empty input");
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    if (!std::isfinite(series.values[i])) {
      throw Error("series '" + series.id + "': non-finite value at index " + std::to_string(i));
    }
  }
}

int compute_scale(std::span<const double> samples) {
  double peak = 0.0;
  for (double x : samples) {
    if (!std::isfinite(x)) throw Error("compute_scale: non-finite sample");
    peak = std::max(peak, std::abs(x));
  }
  if (peak == 0.0 || !std::isnormal(peak)) return kMinScaleExp;

  // peak = f * 2^e with f in [0.5, 1). round(log2 peak) is e when
  // log2 f >= -0.5, i.e. f^2 >= 1/2, else e - 1. fma keeps the sign exact.
  int e = 0;
  const double f = std::frexp(peak, &e);
  const int k = std::fma(f, f, -0.5) >= 0.0 ? e : e - 1;
  return std::clamp(k, kMinScaleExp, kMaxScaleExp);
}

PatchSamples apply_scale(std::span<const double> samples, int scale_exp) {
  if (samples.size() != kPatchLength) throw Error("apply_scale: patch must hold 64 samples");
  PatchSamples out{};
  for (std::size_t i = 0; i < kPatchLength; ++i) out[i] = std::ldexp(samples[i], -scale_exp);
  return out;
}

PatchSamples unscale(std::span<const double> scaled, int scale_exp) {
  if (scaled.size() != kPatchLength) throw Error("unscale: patch must hold 64 samples");
  PatchSamples out{};
  for (std::size_t i = 0; i < kPatchLength; ++i) out[i] = std::ldexp(scaled[i], scale_exp);
  return out;
}

std::size_t patch_count(std::size_t length) { return (length + kPatchLength - 1) / kPatchLength; }

std::size_t pad_count(std::size_t length) { return patch_count(length) * kPatchLength - length; }

Patch make_patch(std::span<const double> samples) {
  if (samples.size() != kPatchLength) throw Error("make_patch: patch must hold 64 samples");
  Patch p;
  std::copy(samples.begin(), samples.end(), p.samples.begin());
  p.scale_exp = compute_scale(samples);
  p.scaled = apply_scale(samples, p.scale_exp);
  return p;
}

std::vector<Patch> patchify(std::span<const double> values, double pad_value) {
  if (values.empty()) throw Error("patchify: empty input");
  std::vector<Patch> out;
  out.reserve(patch_count(values.size()));
  PatchSamples window{};
  for (std::size_t start = 0; start < values.size(); start += kPatchLength) {
    const std::size_t n = std::min(kPatchLength, values.size() - start);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(start), n, window.begin());
    std::fill(window.begin() + static_cast<std::ptrdiff_t>(n), window.end(), pad_value);
    out.push_back(make_patch(window));
  }
  return out;
}

std::vector<Patch> patchify(const Series& series, double pad_value) {
  return patchify(std::span<const double>(series.values), pad_value);
}

std::vector<double> join_patches(std::span<const Patch> patches, std::size_t length) {
  if (length > patches.size() * kPatchLength) throw Error("join_patches: length exceeds patch data");
  std::vector<double> out;
  out.reserve(patches.size() * kPatchLength);
  for (const Patch& p : patches) out.insert(out.end(), p.samples.begin(), p.samples.end());
  out.resize(length);
  return out;
}

}  // namespace counts::ts
