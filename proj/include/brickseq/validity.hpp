#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "brickseq/geometry.hpp"
#include "json.hpp"

namespace brickseq {

struct SupportRule {
  // Contact between a brick's top layer and an already placed brick above it
  // also counts as support.
  bool allow_underside_attach = false;
};

enum class ViolationKind { Collision, Overhang, DuplicateBrick, UnknownBrick, Incomplete };

std::string_view to_string(ViolationKind kind);

struct Violation {
  std::size_t step = 0;
  ViolationKind kind = ViolationKind::Collision;
  friend bool operator==(const Violation&, const Violation&) = default;
};

struct ValidityReport {
  bool ok = true;
  std::optional<Violation> first_violation;
};

nlohmann::json to_json(const ValidityReport& report);

bool collides(const Placement& p, const CellSet& placed, const Catalog& catalog);

// Caller guarantees p does not collide with placed.
bool supported(const Placement& p, const CellSet& placed, const Catalog& catalog,
               SupportRule rule = {});

// collides() == false && supported() == true
bool placeable(const Placement& p, const CellSet& placed, const Catalog& catalog,
               SupportRule rule = {});

void add_cells(CellSet& placed, const Placement& p, const Catalog& catalog);

// Full check: every step legal and seq is a permutation of all placements.
// A legal but short sequence reports Incomplete at step seq.size().
ValidityReport validate_sequence(std::span<const int> seq, const BrickModel& model,
                                 SupportRule rule = {});

// Same replay, but a legal proper prefix counts as ok.
ValidityReport validate_prefix(std::span<const int> seq, const BrickModel& model,
                               SupportRule rule = {});

}  // namespace brickseq
