#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rlf/checkpoint.hpp"
#include "rlf/errors.hpp"
#include "rlf/parameters.hpp"
#include "test_util.hpp"

using namespace rlf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rlf_test_ckpt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ParameterStore sample(std::uint64_t seed) {
  Rng rng(seed);
  ParameterStore s;
  s.add("a.w", testing::random_tensor(rng, {3, 4}));
  s.add("a.b", testing::random_tensor(rng, {4}));
  s.add("conv.w", testing::random_tensor(rng, {2, 1, 3, 3}));
  return s;
}

}  // namespace

TEST_CASE("save and load round trip at 32-bit precision") {
  const fs::path dir = scratch("roundtrip");
  ParameterStore s = sample(1);
  save_checkpoint(dir / "model.json", s, R"({"step": 7})");
  CHECK(fs::exists(dir / "model.bin"));
  CHECK(fs::file_size(dir / "model.bin") == 4 * s.total_size());
  ParameterStore t = sample(2);
  load_checkpoint(dir / "model.json", t);
  for (const auto& [name, p] : s.items()) {
    const Tensor& v = t.get(name).value;
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == static_cast<double>(static_cast<float>(p.value[i])));
  }
  CHECK(checkpoint_extra(dir / "model.json").find("\"step\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("saving is deterministic") {
  const fs::path dir = scratch("determinism");
  const ParameterStore s = sample(3);
  save_checkpoint(dir / "a.json", s);
  save_checkpoint(dir / "b.json", s);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  fs::remove_all(dir);
}

TEST_CASE("shape mismatches list every offending parameter") {
  const fs::path dir = scratch("mismatch");
  save_checkpoint(dir / "model.json", sample(4));
  ParameterStore other;
  other.add("a.w", Tensor({3, 5}));
  other.add("a.b", Tensor({4}));
  other.add("extra", Tensor({1}));
  try {
    load_checkpoint(dir / "model.json", other);
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("a.w") != std::string::npos);
    CHECK(msg.find("extra") != std::string::npos);
    CHECK(msg.find("conv.w") != std::string::npos);
    CHECK(msg.find("a.b") == std::string::npos);
  }
  ParameterStore t = sample(5);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json", t), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("parameter store") {
  ParameterStore s = sample(6);
  CHECK(s.count() == 3);
  CHECK(s.total_size() == 12 + 4 + 18);
  std::vector<std::string> names;
  for (const auto& [n, p] : s.items()) names.push_back(n);
  CHECK(names == std::vector<std::string>{"a.b", "a.w", "conv.w"});
  CHECK_THROWS(s.get("nope"));
  CHECK_THROWS(s.add("a.b", Tensor({1})));
  Initializer i1(3), i2(3);
  CHECK(i1.he_uniform({4, 4}, 4) == i2.he_uniform({4, 4}, 4));
}
