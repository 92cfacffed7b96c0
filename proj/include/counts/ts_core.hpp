#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace counts::ts {

inline constexpr std::size_t kPatchLength = 64;
inline constexpr int kMinScaleExp = -10;
inline constexpr int kMaxScaleExp = 36;
inline constexpr int kNumScaleExps = kMaxScaleExp - kMinScaleExp + 1;  // 47

struct Series {
  std::string id;
  std::vector<double> values;
  std::map<std::string, std::string> meta;
};

using PatchSamples = std::array<double, kPatchLength>;

// A 64-sample window together with its power-of-two scale.
// Invariant: scaled[i] == samples[i] * 2^-scale_exp exactly.
struct Patch {
  PatchSamples samples{};
  int scale_exp = kMinScaleExp;
  PatchSamples scaled{};
};

// Throws counts::Error unless the series is non-empty and all values finite.
void validate(const Series& series);

// Round(log2(max|x|)) with ties toward +inf, clamped to [-10, 36].
// All-zero (and subnormal) input maps to the floor exponent -10.
int compute_scale(std::span<const double> samples);

// x * 2^-k and its inverse. Power-of-two scaling is exact unless the result
// overflows or leaves the normal range.
PatchSamples apply_scale(std::span<const double> samples, int scale_exp);
PatchSamples unscale(std::span<const double> scaled, int scale_exp);

std::size_t patch_count(std::size_t length);
std::size_t pad_count(std::size_t length);

Patch make_patch(std::span<const double> samples);

// ceil(n/64) patches in order; the final patch is right-padded with pad_value.
std::vector<Patch> patchify(std::span<const double> values, double pad_value = 0.0);
std::vector<Patch> patchify(const Series& series, double pad_value = 0.0);

// Concatenate patch samples and truncate to `length`.
std::vector<double> join_patches(std::span<const Patch> patches, std::size_t length);

}  // namespace counts::ts
