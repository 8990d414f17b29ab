#include <algorithm>
#include <numeric>

#include "brickseq/validity.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brickseq;

TEST_SUITE("validity") {
  TEST_CASE("bottom-up tower is valid, top-down overhangs at step 0") {
    const BrickModel m = testutil::tower(4);
    CHECK(validate_sequence(std::vector<int>{0, 1, 2, 3}, m).ok);
    const auto r = validate_sequence(std::vector<int>{3, 2, 1, 0}, m);
    CHECK_FALSE(r.ok);
    CHECK(r.first_violation == Violation{0, ViolationKind::Overhang});
  }

  TEST_CASE("violation kinds") {
    const BrickModel m = testutil::tower(3);
    CHECK(validate_sequence(std::vector<int>{0, 0, 1}, m).first_violation == Violation{1, ViolationKind::DuplicateBrick});
    CHECK(validate_sequence(std::vector<int>{0, 7, 1}, m).first_violation == Violation{1, ViolationKind::UnknownBrick});
    CHECK(validate_sequence(std::vector<int>{0, 1}, m).first_violation == Violation{2, ViolationKind::Incomplete});
    CHECK(validate_prefix(std::vector<int>{0, 1}, m).ok);

    BrickModel clash = testutil::tower(2);
    clash.placements[1] = {3, {0, 0, 0}, Rotation::R0};
    CHECK(validate_sequence(std::vector<int>{0, 1}, clash).first_violation == Violation{1, ViolationKind::Collision});
  }

  TEST_CASE("underside attachment is opt-in") {
    BrickModel hang{"hang", testutil::unit_catalog(),
                    {{1, {0, 0, 0}, Rotation::R0}, {1, {0, 0, 1}, Rotation::R0}, {4, {0, 0, 2}, Rotation::R0},
                     {1, {0, 3, 1}, Rotation::R0}}};
    const std::vector<int> seq{0, 1, 2, 3};
    CHECK(validate_sequence(seq, hang).first_violation == Violation{3, ViolationKind::Overhang});
    CHECK(validate_sequence(seq, hang, SupportRule{true}).ok);
  }

  TEST_CASE("report json") {
    const auto r = validate_sequence(std::vector<int>{1, 0}, testutil::tower(2));
    const auto j = to_json(r);
    CHECK(j["ok"] == false);
    CHECK(j["first_violation"]["step"] == 0);
    CHECK(j["first_violation"]["kind"] == "Overhang");
    CHECK(to_json(ValidityReport{})["ok"] == true);
  }

  TEST_CASE("property: prefix of a valid sequence is valid, validity is monotone in the placed set") {
    const BrickModel m = testutil::bridge();
    std::vector<int> perm{0, 1, 2};
    do {
      const bool ok = validate_sequence(perm, m).ok;
      for (std::size_t len = 0; len <= perm.size() && ok; ++len)
        CHECK(validate_prefix(std::span<const int>(perm).first(len), m).ok);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
}
