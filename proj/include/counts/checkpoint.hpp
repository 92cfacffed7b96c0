#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "counts/nn.hpp"

namespace counts::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> data;
};

// Versioned container: JSON manifest plus named f32 arrays.
// Byte layout is documented in docs/formats.md.
struct Container {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  bool contains(const std::string& name) const;
  const NamedArray& get(const std::string& name) const;

  void put(const std::string& name, const nn::Tensor<float>& t);
  void put(const std::string& name, const std::vector<float>& v);
  void put(const std::string& name, const std::vector<std::int32_t>& v);

  // Copies into `out`, which must already have the stored shape.
  void read_into(const std::string& name, nn::Tensor<float>& out) const;
  std::vector<float> read_vector(const std::string& name) const;
  std::vector<std::int32_t> read_ints(const std::string& name) const;
};

std::vector<std::uint8_t> serialize(const Container& c);
Container deserialize(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const Container& c);
Container read_file(const std::filesystem::path& path);

// Adds every MLP parameter under `prefix` (e.g. "encoder.").
void put_mlp(Container& c, const std::string& prefix, const nn::Mlp<float>& mlp);
void read_mlp(const Container& c, const std::string& prefix, nn::Mlp<float>& mlp);

nlohmann::json to_json(const nn::MlpConfig& cfg);
nn::MlpConfig mlp_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 14695981039346656037ULL);

}  // namespace counts::ckpt
