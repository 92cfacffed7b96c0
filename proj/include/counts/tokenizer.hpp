#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "counts/checkpoint.hpp"
#include "counts/nn.hpp"
#include "counts/rvq.hpp"
#include "counts/ts_core.hpp"

namespace counts::tok {

inline constexpr int kTokensPerPatch = 4;
inline constexpr std::uint16_t kStreamVersion = 1;

enum class TokenKind { kScale, kSeries, kReserved };

struct TokenInfo {
  TokenKind kind;
  int value;      // scale exponent, code index, or reserved slot
  int level = -1; // RVQ level for series tokens
};

// Id layout: [0, 47) scale exponents -10..36, then one block of
// `codebook_size` ids per RVQ level, then the reserved <ts> / </ts> markers.
class Vocab {
 public:
  explicit Vocab(int levels = rvq::kDefaultLevels, int codebook_size = rvq::kDefaultCodebookSize);

  int levels() const { return levels_; }
  int codebook_size() const { return codebook_size_; }

  int scale_token(int exponent) const;
  int series_token(int level, int index) const;
  int begin_token() const { return new_token_count(); }
  int end_token() const { return new_token_count() + 1; }

  int new_token_count() const { return ts::kNumScaleExps + levels_ * codebook_size_; }
  int size() const { return new_token_count() + 2; }

  bool valid(int id) const { return id >= 0 && id < size(); }
  TokenInfo info(int id) const;

  // Surface forms: <ts_scale_K>, <ts_L_J>, <ts>, </ts>.
  std::string literal(int id) const;
  // Returns -1 for anything that is not a known literal.
  int parse_literal(std::string_view text) const;

 private:
  int levels_;
  int codebook_size_;
};

struct StreamHeader {
  std::uint64_t length = 0;  // original series length
  std::uint32_t pad = 0;     // samples of padding in the final patch
  std::uint16_t version = kStreamVersion;

  bool operator==(const StreamHeader&) const = default;
};

// Per patch: [scale, level0, level1, level2].
struct TokenStream {
  StreamHeader header;
  std::vector<std::int32_t> tokens;

  std::size_t patch_count() const { return tokens.size() / kTokensPerPatch; }
  bool operator==(const TokenStream&) const = default;
};

// Checks version, arity, pad consistency and per-position token kinds.
// Throws StreamError naming the offending token offset.
void validate(const TokenStream& stream, const Vocab& vocab);

// ---------------------------------------------------------------------------

struct TokenizerConfig {
  int hidden = 512;
  int ff = 512;
  int blocks = 6;
  int embed_dim = rvq::kDefaultDim;
  int levels = rvq::kDefaultLevels;
  int codebook_size = rvq::kDefaultCodebookSize;

  nn::MlpConfig encoder() const;
  nn::MlpConfig decoder() const;
  bool operator==(const TokenizerConfig&) const = default;
};

nlohmann::json to_json(const TokenizerConfig& c);
TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j);

struct TokenizerModel {
  TokenizerConfig config;
  nn::Mlp<float> encoder;
  nn::Mlp<float> decoder;
  rvq::ResidualQuantizer rvq;

  // Random networks, codebooks allocated but not initialised.
  static TokenizerModel create(const TokenizerConfig& config, Rng& rng);

  Vocab vocab() const { return Vocab(config.levels, config.codebook_size); }
  bool ready() const { return rvq.initialized(); }
};

// Scaled patches as a (patches x 64) float matrix, plus their exponents.
struct PatchBatch {
  rvq::Matrix scaled;
  std::vector<int> scale_exps;
};
PatchBatch to_batch(std::span<const ts::Patch> patches);

struct Encoded {
  TokenStream stream;
  rvq::BatchCodes codes;
};

Encoded encode_detailed(const ts::Series& series, const TokenizerModel& model);
TokenStream encode(const ts::Series& series, const TokenizerModel& model);
std::vector<double> decode(const TokenStream& stream, const TokenizerModel& model);

// decode(encode(series)) without materialising the stream.
std::vector<double> reconstruct(const ts::Series& series, const TokenizerModel& model);

std::string render_text(const TokenStream& stream, const Vocab& vocab);
// Accepts the rendered form, or bare token literals (length = patches * 64).
TokenStream parse_text(std::string_view text, const Vocab& vocab);

// True when `text` contains at least one <ts...> series/scale literal.
bool contains_token_text(std::string_view text);

// Binary single-stream encoding (docs/formats.md).
void write_stream(std::ostream& out, const TokenStream& stream);
TokenStream read_stream(std::istream& in);

struct NamedStream {
  std::string id;
  TokenStream stream;
};
void write_stream_file(const std::filesystem::path& path, const std::vector<NamedStream>& streams);
std::vector<NamedStream> read_stream_file(const std::filesystem::path& path);

// Model <-> checkpoint container.
ckpt::Container to_container(const TokenizerModel& model);
TokenizerModel from_container(const ckpt::Container& c);
void save_model(const std::filesystem::path& path, const TokenizerModel& model);
TokenizerModel load_model(const std::filesystem::path& path);

}  // namespace counts::tok
