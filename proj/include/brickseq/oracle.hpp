#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "brickseq/geometry.hpp"
#include "brickseq/validity.hpp"

namespace brickseq {

enum class OrderStrategy {
  deterministic,  // lowest (z, y, x, part_id) first
  randomized,     // uniform over the frontier, seeded
  adversarial,    // highest (z, y, x, part_id) first; worst-case tie-break for timing
};

OrderStrategy parse_strategy(std::string_view name);  // "det" | "rand" | "adv" (long names too)

struct OracleOptions {
  SupportRule rule{};
  // Upper bound on search-node expansions before giving up with NoValidOrdering.
  std::uint64_t max_expansions = 50'000'000;
};

struct OracleStats {
  std::uint64_t expansions = 0;
  std::uint64_t backtracks = 0;
};

// Unplaced placements that are legal on top of `placed`.
std::vector<int> frontier(const BrickModel& model, const std::vector<bool>& used,
                          const CellSet& placed, SupportRule rule = {});

// Greedy frontier search with depth-first backtracking. Throws NoValidOrdering.
AssemblySequence order_sequence(const BrickModel& model, std::uint64_t seed,
                                OrderStrategy strategy, const OracleOptions& options = {},
                                OracleStats* stats = nullptr);

struct Enumeration {
  std::set<AssemblySequence> orderings;
  bool truncated = false;
};

// Brute force over all n! permutations, each checked with validate_sequence.
Enumeration enumerate_valid_orderings(const BrickModel& model, std::size_t cap,
                                      SupportRule rule = {});

}  // namespace brickseq
