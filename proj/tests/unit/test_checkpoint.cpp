#include <doctest.h>

#include <cstring>
#include <sstream>

#include "cmllm/error.hpp"
#include "cmllm/nn/checkpoint.hpp"

using namespace cmllm;
using namespace cmllm::nn;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = {{"hello", "world"}, {"n", 3}};
  Tensor<float> a({2, 3}, {1, 2, 3, 4, 5, 6.5f});
  Tensor<double> b({4}, {0.1, -0.2, 1e-300, 3});
  c.arrays.push_back(to_named_array("alpha", a));
  c.arrays.push_back(to_named_array("beta", b));
  return c;
}

std::string serialize(const Checkpoint& c) {
  std::ostringstream os;
  write_checkpoint(os, c);
  return os.str();
}

template <typename U>
U read_le(const std::string& s, std::size_t& pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace

TEST_CASE("checkpoint byte layout") {
  const std::string bytes = serialize(sample_checkpoint());
  std::size_t pos = 0;
  CHECK(bytes.substr(0, 8) == "CMLLMCKP");
  pos = 8;
  CHECK(read_le<std::uint32_t>(bytes, pos) == kCheckpointVersion);
  const auto hlen = read_le<std::uint64_t>(bytes, pos);
  const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
  CHECK(header["hello"] == "world");
  pos += hlen;
  CHECK(read_le<std::uint64_t>(bytes, pos) == 2);
  const auto nlen = read_le<std::uint32_t>(bytes, pos);
  CHECK(bytes.substr(pos, nlen) == "alpha");
  pos += nlen;
  CHECK(static_cast<unsigned char>(bytes[pos++]) == 0);  // f32
  CHECK(read_le<std::uint32_t>(bytes, pos) == 2);
  CHECK(read_le<std::uint64_t>(bytes, pos) == 2);
  CHECK(read_le<std::uint64_t>(bytes, pos) == 3);
  float last;
  const std::uint32_t bits = [&] {
    std::size_t p = pos + 5 * 4;
    return read_le<std::uint32_t>(bytes, p);
  }();
  std::memcpy(&last, &bits, 4);
  CHECK(last == 6.5f);
}

TEST_CASE("checkpoint round trip preserves every array") {
  const Checkpoint c = sample_checkpoint();
  std::istringstream in(serialize(c));
  const Checkpoint back = read_checkpoint(in);
  CHECK(back.config == c.config);
  REQUIRE(back.arrays.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.arrays[i].name == c.arrays[i].name);
    CHECK(back.arrays[i].dtype == c.arrays[i].dtype);
    CHECK(back.arrays[i].shape == c.arrays[i].shape);
    CHECK(back.arrays[i].bytes == c.arrays[i].bytes);
  }
  CHECK(back.find("beta")->as_double() == std::vector<double>{0.1, -0.2, 1e-300, 3});
  CHECK(back.find("gamma") == nullptr);
}

TEST_CASE("unknown versions, bad magic and truncation are rejected") {
  std::string bytes = serialize(sample_checkpoint());
  std::string wrong_version = bytes;
  wrong_version[8] = static_cast<char>(kCheckpointVersion + 1);
  std::istringstream a(wrong_version);
  CHECK_THROWS_WITH_AS(read_checkpoint(a), doctest::Contains("version"), CompatibilityError);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  std::istringstream b(wrong_magic);
  CHECK_THROWS_AS(read_checkpoint(b), CompatibilityError);

  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 3}) {
    std::istringstream c(bytes.substr(0, cut));
    CHECK_THROWS_AS(read_checkpoint(c), CompatibilityError);
  }
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST_CASE("parameter export and import") {
  ParameterStore<float> src;
  const auto a = src.add("a", "g", {2, 2}, true);
  const auto b = src.add("b", "g", {3}, false);
  src[a].value.storage() = {1, 2, 3, 4};
  src[b].value.storage() = {5, 6, 7};
  Checkpoint c;
  c.arrays = export_parameters(src);

  ParameterStore<double> dst;
  dst.add("a", "g", {2, 2}, true);
  dst.add("b", "g", {3}, false);
  import_parameters(dst, c);
  CHECK(dst.at(0).value.storage() == std::vector<double>{1, 2, 3, 4});
  CHECK(dst.at(1).value.storage() == std::vector<double>{5, 6, 7});

  ParameterStore<float> missing;
  missing.add("zzz", "g", {1}, false);
  CHECK_THROWS_AS(import_parameters(missing, c), CompatibilityError);
  ParameterStore<float> shape;
  shape.add("a", "g", {4}, false);
  CHECK_THROWS_AS(import_parameters(shape, c), CompatibilityError);
}
