#include <doctest.h>

#include <filesystem>

#include "counts/checkpoint.hpp"
#include "counts/error.hpp"

using namespace counts;
using namespace counts::ckpt;

namespace {

Container sample() {
  Container c;
  c.manifest = {{"kind", "test"}, {"n", 3}};
  nn::Tensor<float> t(2, 3);
  t << 1.f, -2.f, 3.5f, 1e-30f, 7.f, -0.f;
  c.put("a", t);
  c.put("b", std::vector<float>{0.25f});
  c.put("c", std::vector<std::int32_t>{-3, 0, 16777216});
  return c;
}

}  // namespace

TEST_CASE("serialize / deserialize round-trips manifest and arrays bit-exactly") {
  const Container c = sample();
  const auto bytes = serialize(c);
  const Container d = deserialize(bytes);
  CHECK(d.manifest == c.manifest);
  REQUIRE(d.arrays.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(d.arrays[i].name == c.arrays[i].name);
    CHECK(d.arrays[i].shape == c.arrays[i].shape);
    CHECK(d.arrays[i].data == c.arrays[i].data);
  }
  CHECK(d.read_ints("c") == std::vector<std::int32_t>{-3, 0, 16777216});
  CHECK(serialize(d) == bytes);
}

TEST_CASE("corruption is detected") {
  auto bytes = serialize(sample());
  SUBCASE("flipped byte") {
    bytes[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_WITH_AS(deserialize(bytes), doctest::Contains("checksum"), Error);
  }
  SUBCASE("truncated") {
    bytes.resize(bytes.size() - 5);
    CHECK_THROWS_AS(deserialize(bytes), Error);
  }
  SUBCASE("tiny") { CHECK_THROWS_AS(deserialize(std::vector<std::uint8_t>(4)), Error); }
}

TEST_CASE("read_into enforces the stored shape") {
  const Container c = sample();
  nn::Tensor<float> ok(2, 3);
  c.read_into("a", ok);
  CHECK(ok(0, 2) == 3.5f);
  nn::Tensor<float> bad(3, 2);
  CHECK_THROWS_AS(c.read_into("a", bad), Error);
  CHECK_THROWS_AS(c.get("missing"), Error);
  CHECK(c.contains("b"));
  CHECK_FALSE(c.contains("z"));
}

TEST_CASE("mlp parameters survive a file round trip") {
  Rng rng(3);
  const nn::MlpConfig cfg{4, 8, 2, 3, 6};
  const auto net = nn::Mlp<float>::init(cfg, rng);
  Container c;
  c.manifest["encoder"] = to_json(cfg);
  put_mlp(c, "encoder.", net);
  const auto path = std::filesystem::temp_directory_path() / "counts_test_ckpt.bin";
  write_file(path, c);
  const Container d = read_file(path);
  std::filesystem::remove(path);

  CHECK(mlp_config_from_json(d.manifest["encoder"]) == cfg);
  nn::Mlp<float> back(cfg);
  read_mlp(d, "encoder.", back);
  const nn::Tensor<float> x = nn::Tensor<float>::Random(5, 4);
  CHECK(back.forward(x) == net.forward(x));

  nn::Mlp<float> wrong({4, 8, 2, 2, 6});
  CHECK_THROWS_AS(read_mlp(d, "decoder.", wrong), Error);
}

TEST_CASE("fnv1a matches the published test vector") {
  const std::string s = "a";
  CHECK(fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a(nullptr, 0) == 0xcbf29ce484222325ULL);
}
