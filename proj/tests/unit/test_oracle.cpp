#include <algorithm>
#include <numeric>

#include "brickseq/datasets.hpp"
#include "brickseq/errors.hpp"
#include "brickseq/oracle.hpp"
#include "brickseq/validity.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brickseq;

namespace {

// Independent enumeration: depth-first over legal placements only.
void all_orders(const BrickModel& m, std::vector<int>& cur, std::vector<bool>& used, CellSet& placed,
                std::set<AssemblySequence>& out) {
  if (cur.size() == m.size()) {
    out.insert(cur);
    return;
  }
  for (int i = 0; i < static_cast<int>(m.size()); ++i) {
    if (used[static_cast<std::size_t>(i)]) continue;
    const Placement& p = m.placements[static_cast<std::size_t>(i)];
    if (!placeable(p, placed, m.catalog)) continue;
    CellSet next = placed;
    add_cells(next, p, m.catalog);
    used[static_cast<std::size_t>(i)] = true;
    cur.push_back(i);
    all_orders(m, cur, used, next, out);
    cur.pop_back();
    used[static_cast<std::size_t>(i)] = false;
  }
}

}  // namespace

TEST_SUITE("oracle") {
  TEST_CASE("strategy names") {
    CHECK(parse_strategy("det") == OrderStrategy::deterministic);
    CHECK(parse_strategy("rand") == OrderStrategy::randomized);
    CHECK(parse_strategy("adversarial") == OrderStrategy::adversarial);
    CHECK_THROWS(parse_strategy("best"));
  }

  TEST_CASE("deterministic order of the bridge places both pillars first") {
    const auto order = order_sequence(testutil::bridge(), 0, OrderStrategy::deterministic);
    CHECK(order == AssemblySequence{0, 1, 2});
  }

  TEST_CASE("floating brick has no ordering") {
    BrickModel m = testutil::tower(2);
    m.placements[1].pos.z = 5;
    CHECK_THROWS_AS(order_sequence(m, 0, OrderStrategy::deterministic), NoValidOrdering);
    CHECK(enumerate_valid_orderings(m, 100).orderings.empty());
  }

  TEST_CASE("enumeration agrees with an independent search") {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
      const BrickModel m = synth_model(ModelKind::random_stack, 5, seed);
      std::set<AssemblySequence> expected;
      std::vector<int> cur;
      std::vector<bool> used(m.size(), false);
      CellSet placed;
      all_orders(m, cur, used, placed, expected);
      const auto got = enumerate_valid_orderings(m, 1000);
      CHECK_FALSE(got.truncated);
      CHECK(got.orderings == expected);
    }
  }

  TEST_CASE("enumeration cap truncates") {
    const auto e = enumerate_valid_orderings(testutil::bridge(), 1);
    CHECK(e.truncated);
    CHECK(e.orderings.size() == 1);
  }

  TEST_CASE("every strategy yields a valid permutation, randomized depends on the seed") {
    const BrickModel m = synth_model(ModelKind::pyramid, 30, 3);
    std::set<AssemblySequence> seen;
    for (auto s : {OrderStrategy::deterministic, OrderStrategy::randomized, OrderStrategy::adversarial}) {
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto order = order_sequence(m, seed, s);
        CHECK(validate_sequence(order, m).ok);
        if (s == OrderStrategy::randomized) seen.insert(order);
      }
    }
    CHECK(seen.size() > 1);
    CHECK(order_sequence(m, 9, OrderStrategy::randomized) == order_sequence(m, 9, OrderStrategy::randomized));
  }

  TEST_CASE("expansion budget") {
    const BrickModel m = synth_model(ModelKind::wall, 20, 1);
    OracleStats stats;
    order_sequence(m, 0, OrderStrategy::adversarial, {}, &stats);
    CHECK(stats.expansions >= m.size());
    OracleOptions tight;
    tight.max_expansions = 3;
    CHECK_THROWS_AS(order_sequence(m, 0, OrderStrategy::deterministic, tight), NoValidOrdering);
  }

  TEST_CASE("frontier lists exactly the legal next placements") {
    const BrickModel m = testutil::bridge();
    std::vector<bool> used(3, false);
    CellSet placed;
    CHECK(frontier(m, used, placed) == std::vector<int>{0, 1});
    used[0] = true;
    add_cells(placed, m.placements[0], m.catalog);
    CHECK(frontier(m, used, placed) == std::vector<int>{1, 2});
  }
}
