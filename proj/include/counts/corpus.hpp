#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "counts/ts_core.hpp"

namespace counts::corpus {

enum class Kind { kSineMix, kTrendSeasonal, kAr, kRandomWalk, kSquareSawtooth, kSpikes };

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Every series is offset + amplitude * shape + noise, where shape is
// normalised to max |shape| = 1 before scaling.
struct GeneratorSpec {
  std::vector<std::pair<Kind, double>> kinds = {
      {Kind::kSineMix, 1.0}, {Kind::kTrendSeasonal, 1.0}, {Kind::kAr, 1.0},
      {Kind::kRandomWalk, 1.0}, {Kind::kSquareSawtooth, 1.0}, {Kind::kSpikes, 1.0}};
  Range length{256, 2048};
  Range log10_amplitude{-3.5, 10.5};
  Range offset{-1.5, 1.5};    // in units of amplitude
  Range noise{0.0, 0.02};     // noise std in units of amplitude
  Range period{8, 512};       // samples, drawn log-uniformly
  int max_components = 3;
  int ar_max_order = 2;
  Range ar_root{0.5, 0.99};   // AR characteristic roots; |root| < 1
  Range spike_rate{0.005, 0.03};
  std::uint64_t seed = 0;

  // Throws counts::Error on empty or inverted ranges.
  void validate() const;
};

nlohmann::json to_json(const GeneratorSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);

// n reproducible series; series i depends only on (seed, i).
std::vector<ts::Series> generate(const GeneratorSpec& spec, std::size_t n);
ts::Series generate_one(const GeneratorSpec& spec, std::size_t index);

enum class Format { kJsonl, kCsv, kCsvColumn };
enum class NanPolicy { kInterpolate, kDrop };

Format format_from_string(const std::string& s);
Format format_from_path(const std::filesystem::path& p);

// Fills NaN per policy: interior gaps linearly interpolated, edges take the
// nearest finite value; kDrop removes them. All-NaN input throws.
std::vector<double> apply_nan_policy(std::vector<double> values, NanPolicy policy);

// jsonl: {"id", "values", "meta"} per line, null/"nan" values are NaN.
// csv: one series per row, optional leading non-numeric id field.
// csv-column: one value per line, the whole file is one series.
std::vector<ts::Series> ingest(const std::filesystem::path& path, Format format,
                               NanPolicy policy = NanPolicy::kInterpolate);

void write_jsonl(const std::filesystem::path& path, const std::vector<ts::Series>& series);
std::string to_jsonl_line(const ts::Series& s);

struct Split {
  std::vector<ts::Series> train;
  std::vector<ts::Series> val;
};

// Seeded shuffle, first round(ratio * n) go to train. Each side keeps the
// original relative order.
Split split(const std::vector<ts::Series>& corpus, double ratio, std::uint64_t seed);

}  // namespace counts::corpus
