#include "counts/tokenizer.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "counts/error.hpp"

namespace counts::tok {

static_assert(std::endian::native == std::endian::little, "stream IO assumes a little-endian host");

Vocab::Vocab(int levels, int codebook_size) : levels_(levels), codebook_size_(codebook_size) {
  if (levels < 1 || codebook_size < 1) throw Error("vocab: invalid layout");
}

int Vocab::scale_token(int exponent) const {
  if (exponent < ts::kMinScaleExp || exponent > ts::kMaxScaleExp) {
    throw Error("vocab: scale exponent " + std::to_string(exponent) + " out of range");
  }
  return exponent - ts::kMinScaleExp;
}

int Vocab::series_token(int level, int index) const {
  if (level < 0 || level >= levels_ || index < 0 || index >= codebook_size_) {
    throw Error("vocab: series token (" + std::to_string(level) + ", " + std::to_string(index) +
                ") out of range");
  }
  return ts::kNumScaleExps + level * codebook_size_ + index;
}

TokenInfo Vocab::info(int id) const {
  if (!valid(id)) throw Error("vocab: invalid token id " + std::to_string(id));
  if (id < ts::kNumScaleExps) return {TokenKind::kScale, id + ts::kMinScaleExp};
  if (id < new_token_count()) {
    const int rel = id - ts::kNumScaleExps;
    return {TokenKind::kSeries, rel % codebook_size_, rel / codebook_size_};
  }
  return {TokenKind::kReserved, id - new_token_count()};
}

std::string Vocab::literal(int id) const {
  const TokenInfo t = info(id);
  switch (t.kind) {
    case TokenKind::kScale:
      return "<ts_scale_" + std::to_string(t.value) + ">";
    case TokenKind::kSeries:
      return "<ts_" + std::to_string(t.level) + "_" + std::to_string(t.value) + ">";
    case TokenKind::kReserved:
      return t.value == 0 ? "<ts>" : "</ts>";
  }
  return {};
}

namespace {

// Parses a canonical integer occupying all of `s`: no "+", no leading zeros,
// no "-0", so every literal has exactly one spelling.
bool parse_int(std::string_view s, long long& out) {
  const std::string_view digits = !s.empty() && s[0] == '-' ? s.substr(1) : s;
  if (digits.empty() || (digits[0] == '0' && (digits.size() > 1 || digits.size() < s.size()))) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

}  // namespace

int Vocab::parse_literal(std::string_view text) const {
  if (text == "<ts>") return begin_token();
  if (text == "</ts>") return end_token();
  if (text.size() < 6 || text.substr(0, 4) != "<ts_" || text.back() != '>') return -1;
  std::string_view body = text.substr(4, text.size() - 5);
  long long a = 0, b = 0;
  if (body.substr(0, 6) == "scale_") {
    if (!parse_int(body.substr(6), a)) return -1;
    if (a < ts::kMinScaleExp || a > ts::kMaxScaleExp) return -1;
    return scale_token(static_cast<int>(a));
  }
  const auto us = body.find('_');
  if (us == std::string_view::npos) return -1;
  if (!parse_int(body.substr(0, us), a) || !parse_int(body.substr(us + 1), b)) return -1;
  if (a < 0 || a >= levels_ || b < 0 || b >= codebook_size_) return -1;
  return series_token(static_cast<int>(a), static_cast<int>(b));
}

void validate(const TokenStream& stream, const Vocab& vocab) {
  const auto& h = stream.header;
  if (h.version != kStreamVersion) {
    throw StreamError("unsupported stream version " + std::to_string(h.version), 0);
  }
  if (h.length == 0) throw StreamError("header declares an empty series", 0);
  if (stream.tokens.size() % kTokensPerPatch != 0) {
    throw StreamError("token count " + std::to_string(stream.tokens.size()) + " is not a multiple of 4",
                      stream.tokens.size());
  }
  const std::size_t want = ts::patch_count(h.length);
  if (stream.patch_count() != want) {
    throw StreamError("header declares " + std::to_string(want) + " patches, stream holds " +
                          std::to_string(stream.patch_count()),
                      std::min(stream.tokens.size(), want * kTokensPerPatch));
  }
  if (h.pad != ts::pad_count(h.length)) {
    throw StreamError("header pad count " + std::to_string(h.pad) + " inconsistent with length", 0);
  }
  for (std::size_t i = 0; i < stream.tokens.size(); ++i) {
    const int id = stream.tokens[i];
    if (!vocab.valid(id)) throw StreamError("invalid token id " + std::to_string(id), i);
    const TokenInfo t = vocab.info(id);
    const int slot = static_cast<int>(i % kTokensPerPatch);
    if (slot == 0 && t.kind != TokenKind::kScale) throw StreamError("expected a scale token", i);
    if (slot > 0 && (t.kind != TokenKind::kSeries || t.level != slot - 1)) {
      throw StreamError("expected a level-" + std::to_string(slot - 1) + " series token", i);
    }
  }
}

// ---------------------------------------------------------------------------

nn::MlpConfig TokenizerConfig::encoder() const {
  return {static_cast<int>(ts::kPatchLength), hidden, embed_dim, blocks, ff};
}

nn::MlpConfig TokenizerConfig::decoder() const {
  return {embed_dim, hidden, static_cast<int>(ts::kPatchLength), blocks, ff};
}

nlohmann::json to_json(const TokenizerConfig& c) {
  return {{"hidden", c.hidden},       {"ff", c.ff},         {"blocks", c.blocks},
          {"embed_dim", c.embed_dim}, {"levels", c.levels}, {"codebook_size", c.codebook_size},
          {"patch_length", ts::kPatchLength}};
}

TokenizerConfig tokenizer_config_from_json(const nlohmann::json& j) {
  TokenizerConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.ff = j.value("ff", c.ff);
  c.blocks = j.value("blocks", c.blocks);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.levels = j.value("levels", c.levels);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  if (j.value("patch_length", ts::kPatchLength) != ts::kPatchLength) {
    throw Error("tokenizer config: patch_length must be 64");
  }
  return c;
}

TokenizerModel TokenizerModel::create(const TokenizerConfig& config, Rng& rng) {
  TokenizerModel m;
  m.config = config;
  m.encoder = nn::Mlp<float>::init(config.encoder(), rng);
  m.decoder = nn::Mlp<float>::init(config.decoder(), rng);
  m.rvq = rvq::ResidualQuantizer(config.levels, config.codebook_size, config.embed_dim);
  return m;
}

PatchBatch to_batch(std::span<const ts::Patch> patches) {
  PatchBatch b;
  b.scaled.resize(static_cast<Eigen::Index>(patches.size()), static_cast<Eigen::Index>(ts::kPatchLength));
  b.scale_exps.reserve(patches.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    for (std::size_t j = 0; j < ts::kPatchLength; ++j) {
      b.scaled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<float>(patches[i].scaled[j]);
    }
    b.scale_exps.push_back(patches[i].scale_exp);
  }
  return b;
}

namespace {

void require_ready(const TokenizerModel& model) {
  if (!model.ready()) throw Error("untrained model: codebooks are not initialized");
}

std::vector<double> decode_codes(const rvq::Matrix& quantized, std::span<const int> scale_exps,
                                 std::size_t length, const TokenizerModel& model) {
  const rvq::Matrix recon = model.decoder.forward(quantized);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(recon.rows()) * ts::kPatchLength);
  for (Eigen::Index i = 0; i < recon.rows(); ++i) {
    for (Eigen::Index j = 0; j < recon.cols(); ++j) {
      out.push_back(std::ldexp(static_cast<double>(recon(i, j)), scale_exps[static_cast<std::size_t>(i)]));
    }
  }
  out.resize(length);
  return out;
}

}  // namespace

Encoded encode_detailed(const ts::Series& series, const TokenizerModel& model) {
  require_ready(model);
  ts::validate(series);
  const auto patches = ts::patchify(series);
  const PatchBatch batch = to_batch(patches);
  const rvq::Matrix emb = model.encoder.forward(batch.scaled);
  Encoded enc;
  enc.codes = model.rvq.quantize(emb);
  const Vocab vocab = model.vocab();
  enc.stream.header.length = series.values.size();
  enc.stream.header.pad = static_cast<std::uint32_t>(ts::pad_count(series.values.size()));
  enc.stream.tokens.reserve(patches.size() * kTokensPerPatch);
  for (std::size_t p = 0; p < patches.size(); ++p) {
    enc.stream.tokens.push_back(vocab.scale_token(batch.scale_exps[p]));
    for (int l = 0; l < model.rvq.levels(); ++l) {
      enc.stream.tokens.push_back(vocab.series_token(l, enc.codes.index(static_cast<int>(p), l)));
    }
  }
  return enc;
}

TokenStream encode(const ts::Series& series, const TokenizerModel& model) {
  if (model.config.levels + 1 != kTokensPerPatch) throw Error("encode: stream layout requires 3 RVQ levels");
  return encode_detailed(series, model).stream;
}

std::vector<double> decode(const TokenStream& stream, const TokenizerModel& model) {
  require_ready(model);
  const Vocab vocab = model.vocab();
  validate(stream, vocab);
  const std::size_t patches = stream.patch_count();
  std::vector<int> idx;
  std::vector<int> exps;
  idx.reserve(patches * static_cast<std::size_t>(model.rvq.levels()));
  for (std::size_t p = 0; p < patches; ++p) {
    exps.push_back(vocab.info(stream.tokens[p * kTokensPerPatch]).value);
    for (int l = 0; l < model.rvq.levels(); ++l) {
      idx.push_back(vocab.info(stream.tokens[p * kTokensPerPatch + 1 + static_cast<std::size_t>(l)]).value);
    }
  }
  const rvq::Matrix q = model.rvq.dequantize_batch(idx, static_cast<int>(patches));
  return decode_codes(q, exps, stream.header.length, model);
}

std::vector<double> reconstruct(const ts::Series& series, const TokenizerModel& model) {
  require_ready(model);
  ts::validate(series);
  const auto patches = ts::patchify(series);
  const PatchBatch batch = to_batch(patches);
  const auto codes = model.rvq.quantize(model.encoder.forward(batch.scaled));
  return decode_codes(codes.quantized, batch.scale_exps, series.values.size(), model);
}

// ---------------------------------------------------------------------------

std::string render_text(const TokenStream& stream, const Vocab& vocab) {
  validate(stream, vocab);
  std::string out = "<ts n=" + std::to_string(stream.header.length) + ">";
  for (int id : stream.tokens) out += vocab.literal(id);
  out += "</ts>";
  return out;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

}  // namespace

TokenStream parse_text(std::string_view text, const Vocab& vocab) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < text.size() && is_space(text[pos])) ++pos;
  };
  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError("character " + std::to_string(pos) + ": " + what, 0);
  };

  TokenStream s;
  bool wrapped = false;
  bool closed = false;
  skip();
  if (text.substr(pos, 6) == "<ts n=") {
    const auto end = text.find('>', pos);
    if (end == std::string_view::npos) throw fail("unterminated stream header");
    long long n = 0;
    if (!parse_int(text.substr(pos + 6, end - pos - 6), n) || n <= 0) throw fail("bad series length");
    s.header.length = static_cast<std::uint64_t>(n);
    wrapped = true;
    pos = end + 1;
  }
  while (true) {
    skip();
    if (pos >= text.size()) break;
    if (text[pos] != '<') throw fail("expected a token literal");
    const auto end = text.find('>', pos);
    if (end == std::string_view::npos) throw fail("unterminated token literal");
    const std::string_view lit = text.substr(pos, end - pos + 1);
    const int id = vocab.parse_literal(lit);
    if (id < 0) throw fail("unknown token literal '" + std::string(lit) + "'");
    if (id == vocab.end_token()) {
      if (!wrapped) throw fail("'</ts>' without a stream header");
      pos = end + 1;
      closed = true;
      break;
    }
    if (id == vocab.begin_token()) throw fail("unexpected '<ts>'");
    s.tokens.push_back(id);
    pos = end + 1;
  }
  skip();
  if (wrapped && !closed) throw fail("missing '</ts>'");
  if (pos != text.size()) throw fail("trailing text after '</ts>'");
  if (!wrapped) s.header.length = (s.tokens.size() / kTokensPerPatch) * ts::kPatchLength;
  s.header.pad = s.header.length > 0 ? static_cast<std::uint32_t>(ts::pad_count(s.header.length)) : 0;
  validate(s, vocab);
  return s;
}

bool contains_token_text(std::string_view text) {
  return text.find("<ts_") != std::string_view::npos;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kStreamMagic[4] = {'C', 'T', 'S', 'K'};
constexpr char kFileMagic[4] = {'C', 'T', 'S', 'F'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("token stream: truncated input");
  return v;
}

}  // namespace

void write_stream(std::ostream& out, const TokenStream& stream) {
  out.write(kStreamMagic, 4);
  put<std::uint16_t>(out, stream.header.version);
  put<std::uint16_t>(out, 0);
  put<std::uint64_t>(out, stream.header.length);
  put<std::uint32_t>(out, stream.header.pad);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.tokens.size()));
  for (auto t : stream.tokens) put<std::uint32_t>(out, static_cast<std::uint32_t>(t));
  if (!out) throw Error("token stream: write failed");
}

TokenStream read_stream(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kStreamMagic, 4) != 0) throw Error("token stream: bad magic");
  TokenStream s;
  s.header.version = get<std::uint16_t>(in);
  if (s.header.version != kStreamVersion) {
    throw Error("token stream: unsupported version " + std::to_string(s.header.version));
  }
  get<std::uint16_t>(in);
  s.header.length = get<std::uint64_t>(in);
  s.header.pad = get<std::uint32_t>(in);
  const auto n = get<std::uint32_t>(in);
  s.tokens.resize(n);
  for (auto& t : s.tokens) t = static_cast<std::int32_t>(get<std::uint32_t>(in));
  return s;
}

void write_stream_file(const std::filesystem::path& path, const std::vector<NamedStream>& streams) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(kFileMagic, 4);
  put<std::uint32_t>(out, kStreamVersion);
  put<std::uint64_t>(out, streams.size());
  for (const auto& ns : streams) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ns.id.size()));
    out.write(ns.id.data(), static_cast<std::streamsize>(ns.id.size()));
    write_stream(out, ns.stream);
  }
}

std::vector<NamedStream> read_stream_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFileMagic, 4) != 0) throw Error("stream file: bad magic");
  if (get<std::uint32_t>(in) != kStreamVersion) throw Error("stream file: unsupported version");
  const auto count = get<std::uint64_t>(in);
  std::vector<NamedStream> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedStream ns;
    ns.id.resize(get<std::uint32_t>(in));
    in.read(ns.id.data(), static_cast<std::streamsize>(ns.id.size()));
    if (!in) throw Error("stream file: truncated id");
    ns.stream = read_stream(in);
    out.push_back(std::move(ns));
  }
  return out;
}

// ---------------------------------------------------------------------------

ckpt::Container to_container(const TokenizerModel& model) {
  ckpt::Container c;
  c.manifest["kind"] = "counts-tokenizer";
  c.manifest["architecture"] = to_json(model.config);
  c.manifest["architecture"]["encoder"] = ckpt::to_json(model.config.encoder());
  c.manifest["architecture"]["decoder"] = ckpt::to_json(model.config.decoder());
  c.manifest["codebooks_initialized"] = model.rvq.initialized();
  ckpt::put_mlp(c, "encoder.", model.encoder);
  ckpt::put_mlp(c, "decoder.", model.decoder);
  for (const auto& b : model.rvq.codebooks()) {
    const std::string p = "rvq." + std::to_string(b.level) + ".";
    c.put(p + "vectors", b.vectors);
    c.put(p + "usage_ema", b.usage_ema);
    c.put(p + "sum_ema", b.sum_ema);
    c.put(p + "steps_since_use", b.steps_since_use);
  }
  return c;
}

TokenizerModel from_container(const ckpt::Container& c) {
  if (c.manifest.value("kind", std::string()) != "counts-tokenizer") {
    throw Error("checkpoint is not a tokenizer model");
  }
  TokenizerModel m;
  m.config = tokenizer_config_from_json(c.manifest.at("architecture"));
  m.encoder = nn::Mlp<float>(m.config.encoder());
  m.decoder = nn::Mlp<float>(m.config.decoder());
  ckpt::read_mlp(c, "encoder.", m.encoder);
  ckpt::read_mlp(c, "decoder.", m.decoder);
  m.rvq = rvq::ResidualQuantizer(m.config.levels, m.config.codebook_size, m.config.embed_dim);
  const bool init = c.manifest.value("codebooks_initialized", false);
  for (auto& b : m.rvq.codebooks()) {
    const std::string p = "rvq." + std::to_string(b.level) + ".";
    c.read_into(p + "vectors", b.vectors);
    c.read_into(p + "sum_ema", b.sum_ema);
    b.usage_ema = c.read_vector(p + "usage_ema");
    b.steps_since_use = c.read_ints(p + "steps_since_use");
    if (static_cast<int>(b.usage_ema.size()) != b.size() || static_cast<int>(b.steps_since_use.size()) != b.size()) {
      throw Error("checkpoint: codebook statistics have the wrong length");
    }
    b.initialized = init;
  }
  return m;
}

void save_model(const std::filesystem::path& path, const TokenizerModel& model) {
  ckpt::write_file(path, to_container(model));
}

TokenizerModel load_model(const std::filesystem::path& path) { return from_container(ckpt::read_file(path)); }

}  // namespace counts::tok
