#include "brickseq/oracle.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <tuple>

#include "brickseq/errors.hpp"

namespace brickseq {

OrderStrategy parse_strategy(std::string_view name) {
  if (name == "det" || name == "deterministic") return OrderStrategy::deterministic;
  if (name == "rand" || name == "randomized") return OrderStrategy::randomized;
  if (name == "adv" || name == "adversarial") return OrderStrategy::adversarial;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

std::vector<int> frontier(const BrickModel& model, const std::vector<bool>& used,
                          const CellSet& placed, SupportRule rule) {
  std::vector<int> out;
  for (std::size_t i = 0; i < model.placements.size(); ++i) {
    if (used[i]) continue;
    if (placeable(model.placements[i], placed, model.catalog, rule)) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

auto order_key(const BrickModel& model, int idx) {
  const Placement& p = model.placements[static_cast<std::size_t>(idx)];
  return std::make_tuple(p.pos.z, p.pos.y, p.pos.x, p.part_id, idx);
}

void arrange(std::vector<int>& candidates, const BrickModel& model, OrderStrategy strategy,
             std::mt19937_64& rng) {
  switch (strategy) {
    case OrderStrategy::deterministic:
      std::sort(candidates.begin(), candidates.end(),
                [&](int a, int b) { return order_key(model, a) < order_key(model, b); });
      break;
    case OrderStrategy::adversarial:
      std::sort(candidates.begin(), candidates.end(),
                [&](int a, int b) { return order_key(model, b) < order_key(model, a); });
      break;
    case OrderStrategy::randomized:
      // Fisher-Yates with our own index draws so the result does not depend on
      // the standard library's shuffle implementation.
      for (std::size_t i = candidates.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(candidates[i - 1], candidates[pick(rng)]);
      }
      break;
  }
}

}  // namespace

AssemblySequence order_sequence(const BrickModel& model, std::uint64_t seed,
                                OrderStrategy strategy, const OracleOptions& options,
                                OracleStats* stats) {
  const std::size_t n = model.placements.size();
  if (n == 0) throw NoValidOrdering("model is empty");

  std::mt19937_64 rng(seed);
  std::vector<bool> used(n, false);
  CellSet placed;
  AssemblySequence seq;
  seq.reserve(n);

  struct Frame {
    std::vector<int> candidates;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  OracleStats local;

  auto expand = [&] {
    Frame f{frontier(model, used, placed, options.rule), 0};
    arrange(f.candidates, model, strategy, rng);
    stack.push_back(std::move(f));
    ++local.expansions;
  };

  expand();
  while (seq.size() < n) {
    if (local.expansions > options.max_expansions)
      throw NoValidOrdering("search budget exhausted for model '" + model.name + "'");
    Frame& top = stack.back();
    if (top.next < top.candidates.size()) {
      const int idx = top.candidates[top.next++];
      seq.push_back(idx);
      used[static_cast<std::size_t>(idx)] = true;
      add_cells(placed, model.placements[static_cast<std::size_t>(idx)], model.catalog);
      if (seq.size() < n) expand();
      continue;
    }
    // Dead end: undo the choice that led here.
    stack.pop_back();
    if (stack.empty() || seq.empty())
      throw NoValidOrdering("no valid ordering for model '" + model.name + "'");
    const int last = seq.back();
    seq.pop_back();
    used[static_cast<std::size_t>(last)] = false;
    for (Vec3 c : footprint_cells(model.placements[static_cast<std::size_t>(last)], model.catalog))
      placed.erase(c);
    ++local.backtracks;
  }
  if (stats) *stats = local;
  return seq;
}

Enumeration enumerate_valid_orderings(const BrickModel& model, std::size_t cap, SupportRule rule) {
  Enumeration out;
  AssemblySequence perm(model.placements.size());
  std::iota(perm.begin(), perm.end(), 0);
  do {
    if (validate_sequence(perm, model, rule).ok) {
      if (out.orderings.size() >= cap) {
        out.truncated = true;
        break;
      }
      out.orderings.insert(perm);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

}  // namespace brickseq
