#include "counts/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "counts/error.hpp"

namespace counts::ckpt {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'O', 'U', 'N', 'T', 'S', 'C', 'K'};

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
  template <typename T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw Error("checkpoint: truncated container");
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

bool Container::contains(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

const NamedArray& Container::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error("checkpoint: missing array '" + name + "'");
}

void Container::put(const std::string& name, const nn::Tensor<float>& t) {
  NamedArray a{name, {t.rows(), t.cols()}, std::vector<float>(t.data(), t.data() + t.size())};
  arrays.push_back(std::move(a));
}

void Container::put(const std::string& name, const std::vector<float>& v) {
  arrays.push_back({name, {static_cast<std::int64_t>(v.size())}, v});
}

void Container::put(const std::string& name, const std::vector<std::int32_t>& v) {
  // Stored as f32; exact for |v| < 2^24.
  std::vector<float> f(v.begin(), v.end());
  arrays.push_back({name, {static_cast<std::int64_t>(v.size())}, std::move(f)});
}

void Container::read_into(const std::string& name, nn::Tensor<float>& out) const {
  const auto& a = get(name);
  if (a.shape.size() != 2 || a.shape[0] != out.rows() || a.shape[1] != out.cols()) {
    throw Error("checkpoint: array '" + name + "' has unexpected shape");
  }
  std::copy(a.data.begin(), a.data.end(), out.data());
}

std::vector<float> Container::read_vector(const std::string& name) const { return get(name).data; }

std::vector<std::int32_t> Container::read_ints(const std::string& name) const {
  const auto& a = get(name);
  return std::vector<std::int32_t>(a.data.begin(), a.data.end());
}

std::vector<std::uint8_t> serialize(const Container& c) {
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.pod<std::uint32_t>(kFormatVersion);
  const std::string manifest = c.manifest.dump();
  w.pod<std::uint64_t>(manifest.size());
  w.bytes(manifest.data(), manifest.size());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    std::int64_t count = 1;
    for (auto d : a.shape) count *= d;
    if (count != static_cast<std::int64_t>(a.data.size())) {
      throw Error("checkpoint: array '" + a.name + "' shape does not match data length");
    }
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) w.pod<std::uint64_t>(static_cast<std::uint64_t>(d));
    w.bytes(a.data.data(), a.data.size() * sizeof(float));
  }
  auto& buf = w.buffer();
  const std::uint64_t sum = fnv1a(buf.data(), buf.size());
  w.pod<std::uint64_t>(sum);
  return std::move(buf);
}

Container deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8) throw Error("checkpoint: file too small");
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (fnv1a(bytes.data(), body) != stored) throw Error("checkpoint: checksum mismatch");

  Reader r(bytes.data(), body);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw Error("checkpoint: bad magic");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kFormatVersion) {
    throw Error("checkpoint: unsupported format version " + std::to_string(version));
  }
  Container c;
  const auto mlen = r.pod<std::uint64_t>();
  const auto* m = r.take(mlen);
  c.manifest = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(m), mlen));
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    const auto nlen = r.pod<std::uint32_t>();
    const auto* np = r.take(nlen);
    a.name.assign(reinterpret_cast<const char*>(np), nlen);
    const auto ndim = r.pod<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = r.pod<std::uint64_t>();
      a.shape.push_back(static_cast<std::int64_t>(dim));
      count *= dim;
    }
    if (count > (body - r.pos()) / sizeof(float)) throw Error("checkpoint: truncated array data");
    a.data.resize(count);
    std::memcpy(a.data.data(), r.take(count * sizeof(float)), count * sizeof(float));
    c.arrays.push_back(std::move(a));
  }
  if (r.pos() != body) throw Error("checkpoint: trailing bytes");
  return c;
}

void write_file(const std::filesystem::path& path, const Container& c) {
  const auto bytes = serialize(c);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Container read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void put_mlp(Container& c, const std::string& prefix, const nn::Mlp<float>& mlp) {
  mlp.visit([&](const std::string& name, const nn::Tensor<float>& t) { c.put(prefix + name, t); });
}

void read_mlp(const Container& c, const std::string& prefix, nn::Mlp<float>& mlp) {
  mlp.visit([&](const std::string& name, nn::Tensor<float>& t) { c.read_into(prefix + name, t); });
}

nlohmann::json to_json(const nn::MlpConfig& cfg) {
  return {{"input", cfg.input}, {"hidden", cfg.hidden}, {"output", cfg.output},
          {"blocks", cfg.blocks}, {"ff", cfg.ff}};
}

nn::MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  nn::MlpConfig c;
  c.input = j.at("input").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.output = j.at("output").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.ff = j.at("ff").get<int>();
  return c;
}

}  // namespace counts::ckpt
