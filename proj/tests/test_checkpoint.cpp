#include "doctest.h"

#include <filesystem>

#include "pseudolab/checkpoint.hpp"
#include "pseudolab/error.hpp"
#include "test_helpers.hpp"

using namespace pseudolab;

TEST_CASE("checkpoint round trip preserves architecture and parameters") {
  Rng rng(1);
  ArchDescriptor arch = default_cnn_arch(3, 16, 16, 4);
  arch.conv[1].pool = false;
  const Model m = build_cnn(arch, rng);
  const auto bytes = checkpoint::serialize(m);
  const Model back = checkpoint::deserialize(bytes);
  CHECK(back.arch() == m.arch());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    CHECK(back.parameters()[i].value == m.parameters()[i].value);
  }
  CHECK(checkpoint::serialize(back) == bytes);

  const auto dir = std::filesystem::temp_directory_path() / "pseudolab_ckpt_test";
  std::filesystem::remove_all(dir);
  checkpoint::save(m, dir / "m.ckpt");
  CHECK(checkpoint::serialize(checkpoint::load(dir / "m.ckpt")) == bytes);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint header layout is little-endian and versioned") {
  Rng rng(2);
  const Model m = build_mlp(default_mlp_arch(1, 2, 2, 2), rng);
  const auto b = checkpoint::serialize(m);
  CHECK(std::string(b.begin(), b.begin() + 8) == "PSLBCKPT");
  CHECK(b[8] == 1);
  CHECK(b[9] == 0);
  CHECK(b[12] == 1);  // kind = mlp
  CHECK(b[13] == 1);  // channels
  // magic 8, version 4, kind 1, c/h/w/classes 16, conv count 4, hidden count 4,
  // hidden width 4, param count 4, then per tensor: rank 4 + 8*rank + 8*size.
  const std::size_t header = 8 + 4 + 1 + 16 + 4 + 4 + 4 + 4;
  const std::size_t tensors = (4 + 16 + 8 * 4 * 256) + (4 + 8 + 8 * 256) + (4 + 16 + 8 * 512) +
                              (4 + 8 + 8 * 2);
  CHECK(b.size() == header + tensors);
}

TEST_CASE("corrupt checkpoints name the failing field") {
  Rng rng(3);
  const auto good = checkpoint::serialize(build_cnn(testutil::tiny_cnn_arch(), rng));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(bad_magic), doctest::Contains("'magic'"),
                       FormatError);
  auto bad_version = good;
  bad_version[8] = 9;
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(bad_version), doctest::Contains("'version'"),
                       FormatError);
  auto bad_kind = good;
  bad_kind[12] = 7;
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(bad_kind), doctest::Contains("'kind'"),
                       FormatError);
  std::vector<std::uint8_t> truncated(good.begin(), good.end() - 3);
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(truncated), doctest::Contains("'param.data'"),
                       FormatError);
  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_WITH_AS(checkpoint::deserialize(trailing), doctest::Contains("'trailer'"),
                       FormatError);
  CHECK_THROWS_AS(checkpoint::load("/nonexistent/x.ckpt"), FormatError);
}
