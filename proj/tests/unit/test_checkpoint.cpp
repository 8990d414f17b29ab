#include <fstream>

#include "brickseq/checkpoint.hpp"
#include "brickseq/errors.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brickseq;

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip stores float32 weights, config and vocabulary") {
    const auto dir = testutil::temp_dir("ckpt");
    const Vocabulary vocab({{1, Rotation::R0}, {3, Rotation::R90}}, {});
    LMConfig cfg = LMConfig::tiny(vocab.size());
    cfg.tie_output = false;
    const auto params = LMParams::random(cfg, 5);
    save_checkpoint(dir / "a.bin", params, &vocab);
    const auto ck = load_checkpoint(dir / "a.bin");
    CHECK(ck.params.config() == cfg);
    REQUIRE(ck.vocab);
    CHECK(*ck.vocab == vocab);
    const auto a = params.values(), b = ck.params.values();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));

    save_checkpoint(dir / "b.bin", ck.params, &vocab);
    CHECK(load_checkpoint(dir / "b.bin").params == ck.params);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("corrupt files are rejected") {
    const auto dir = testutil::temp_dir("ckpt_bad");
    const auto params = LMParams::random(LMConfig::tiny(20), 5);
    save_checkpoint(dir / "ok.bin", params);
    CHECK_FALSE(load_checkpoint(dir / "ok.bin").vocab);

    std::ifstream in(dir / "ok.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 8);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.bin"), CheckpointError);
    std::string magic = bytes;
    magic[0] = 'X';
    std::ofstream(dir / "magic.bin", std::ios::binary) << magic;
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), CheckpointError);
    std::filesystem::remove_all(dir);
  }
}
