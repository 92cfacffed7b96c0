#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace counts::app {

inline constexpr const char* kVersion = COUNTS_VERSION;

const std::vector<std::string>& subcommands();

// Full default configuration for a subcommand.
nlohmann::json defaults(const std::string& subcommand);

// defaults <- file config <- flag overrides (RFC 7386 merge). Relative input
// paths become absolute so the result is self-contained.
nlohmann::json resolve(const std::string& subcommand, const nlohmann::json& file_config,
                       const nlohmann::json& overrides);

std::string config_hash(const nlohmann::json& config);

// $COUNTS_OUTPUT_ROOT, or ./runs.
std::filesystem::path output_root();
std::filesystem::path default_out_dir(const std::string& subcommand, const nlohmann::json& config);

// manifest.json: subcommand, version, seed, config hash and resolved config.
void write_manifest(const std::filesystem::path& out_dir, const std::string& subcommand,
                    const nlohmann::json& config);
struct Manifest {
  std::string subcommand;
  nlohmann::json config;
};
Manifest read_manifest(const std::filesystem::path& path);

// Runs a subcommand with a resolved config, writing artifacts and the
// manifest under out_dir. Returns a one-line JSON summary.
nlohmann::json run(const std::string& subcommand, const nlohmann::json& config,
                   const std::filesystem::path& out_dir);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace counts::app
