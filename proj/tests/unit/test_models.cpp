#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fisherscope/checkpoint.hpp"
#include "fisherscope/error.hpp"
#include "fisherscope/model.hpp"

using namespace fisherscope;
namespace fs = std::filesystem;

namespace {

ModelConfig mlp(std::size_t depth, std::size_t width = 8) {
  ModelConfig c;
  c.depth = depth;
  c.width = width;
  c.input_dim = 5;
  c.output_dim = 2;
  return c;
}

ModelConfig transformer(std::size_t depth) {
  ModelConfig c;
  c.kind = ModelKind::transformer_encoder;
  c.task = TaskKind::language_modeling;
  c.depth = depth;
  c.width = 8;
  c.heads = 2;
  c.vocab_size = 16;
  c.max_seq_len = 6;
  c.output_dim = 16;
  return c;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("fisherscope_test_" + name); }

bool same_params(const Model& a, const Model& b) {
  if (a.params().count() != b.params().count()) return false;
  for (std::size_t i = 0; i < a.params().count(); ++i) {
    const auto id = static_cast<ParamId>(i);
    if (a.params()[id].name != b.params()[id].name) return false;
    if (!bitwise_equal(a.params()[id].tensor, b.params()[id].tensor)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("dropout site counts") {
  CHECK(build_model(mlp(2), 0).sites().size() == 2);
  CHECK(build_model(transformer(3), 0).sites().size() == 6);
  for (std::size_t d = 2; d <= 5; ++d) {
    CHECK(build_model(mlp(d), 1).sites().size() == d);
    CHECK(build_model(transformer(d), 1).sites().size() == 2 * d);
    CHECK(mlp(d).dropout_sites().size() == d);
  }
}

TEST_CASE("every site attaches to a real layer and every parameter to one layer") {
  Model m = build_model(transformer(2), 0);
  for (const auto& s : m.sites()) {
    REQUIRE(s.layer < m.layers().size());
    CHECK(s.name.rfind(m.layers()[s.layer].name, 0) == 0);
  }
  for (const auto& p : m.params().all()) CHECK(p.layer < m.layers().size());
  CHECK(m.layers()[m.head_layer()].name == "head");
}

TEST_CASE("construction is deterministic in the seed") {
  CHECK(same_params(build_model(mlp(3), 42), build_model(mlp(3), 42)));
  CHECK(same_params(build_model(transformer(2), 42), build_model(transformer(2), 42)));
  CHECK_FALSE(same_params(build_model(mlp(3), 42), build_model(mlp(3), 43)));
  CHECK(build_model(mlp(3), 42).fingerprint() == build_model(mlp(3), 42).fingerprint());
  CHECK(build_model(mlp(3), 42).fingerprint() != build_model(mlp(3), 43).fingerprint());
}

TEST_CASE("parameter iteration order is fixed by architecture") {
  Model m = build_model(mlp(2), 0);
  std::vector<std::string> names;
  for (const auto& p : m.params().all()) names.push_back(p.name);
  CHECK(names == std::vector<std::string>{"hidden0.weight", "hidden0.bias", "hidden1.weight", "hidden1.bias",
                                          "head.weight", "head.bias"});
}

TEST_CASE("invalid configs are rejected with the violated invariant") {
  auto c = transformer(2);
  c.heads = 3;
  CHECK_THROWS_WITH_AS(build_model(c, 0), doctest::Contains("divisible by heads"), InvalidArgument);
  CHECK_THROWS_WITH_AS(build_model(mlp(1), 0), doctest::Contains("two dropout sites"), InvalidArgument);
  auto z = mlp(2);
  z.width = 0;
  CHECK_THROWS_AS(build_model(z, 0), InvalidArgument);
}

TEST_CASE("output head initialisation") {
  ModelConfig c = mlp(2, 100);
  c.output_dim = 100;  // 10,000-element head matrix
  Model base = build_model(c, 5);
  Model a = init_output_head(base, 1);
  Model b = init_output_head(base, 2);
  const auto& head = a.params().by_name("head.weight").tensor;
  REQUIRE(head.size() == 10000);
  double mean = 0.0, sq = 0.0;
  for (double v : head.values()) mean += v;
  mean /= static_cast<double>(head.size());
  for (double v : head.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(head.size() - 1));
  CHECK(std::abs(sd - 0.02) < 0.02 * 0.05);

  for (const auto& p : base.params().all()) {
    if (p.layer == base.head_layer()) continue;
    CHECK(bitwise_equal(p.tensor, a.params()[p.id].tensor));
  }
  CHECK(a.params().by_name("head.weight").tensor.shape() == b.params().by_name("head.weight").tensor.shape());
  CHECK_FALSE(bitwise_equal(a.params().by_name("head.weight").tensor, b.params().by_name("head.weight").tensor));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  for (const auto& cfg : {mlp(3), transformer(2)}) {
    Model m = init_output_head(build_model(cfg, 9), 4);
    const auto path = temp_file("roundtrip.ckpt");
    save_checkpoint(m, path, {9, "unit test"});
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.model.config() == m.config());
    CHECK(same_params(loaded.model, m));
    CHECK(loaded.model.fingerprint() == m.fingerprint());
    CHECK(loaded.metadata.creation_seed == 9);
    CHECK(loaded.metadata.provenance == "unit test");
    fs::remove(path);
  }
}

TEST_CASE("checkpoint error classes are distinct") {
  Model m = build_model(mlp(2), 1);
  const auto path = temp_file("errors.ckpt");
  save_checkpoint(m, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << b;
  };

  SUBCASE("truncated file") {
    write(bytes.substr(0, bytes.size() - 17));
    CHECK_THROWS_AS(load_checkpoint(path), CorruptFile);
    write(bytes.substr(0, 40));
    CHECK_THROWS_AS(load_checkpoint(path), CorruptFile);
  }
  SUBCASE("version mismatch") {
    std::string b = bytes;
    b.replace(b.find(" 1\n"), 3, " 7\n");
    write(b);
    CHECK_THROWS_AS(load_checkpoint(path), VersionMismatch);
  }
  SUBCASE("config width disagrees with array columns") {
    // Manifest claims width 9; the stored arrays still have 8 rows.
    std::string b = bytes;
    const auto pos = b.find("\"width\": 8");
    REQUIRE(pos != std::string::npos);
    b.replace(pos, 10, "\"width\": 9");
    write(b);
    CHECK_THROWS_AS(load_checkpoint(path), ShapeDisagreement);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(temp_file("nope.ckpt")), IoError); }
  fs::remove(path);
}
