#include "brickseq/validity.hpp"

#include <vector>

namespace brickseq {

std::string_view to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::Collision: return "Collision";
    case ViolationKind::Overhang: return "Overhang";
    case ViolationKind::DuplicateBrick: return "DuplicateBrick";
    case ViolationKind::UnknownBrick: return "UnknownBrick";
    case ViolationKind::Incomplete: return "Incomplete";
  }
  return "?";
}

nlohmann::json to_json(const ValidityReport& report) {
  nlohmann::json j{{"ok", report.ok}};
  if (report.first_violation) {
    j["first_violation"] = {{"step", report.first_violation->step},
                            {"kind", std::string(to_string(report.first_violation->kind))}};
  } else {
    j["first_violation"] = nullptr;
  }
  return j;
}

bool collides(const Placement& p, const CellSet& placed, const Catalog& catalog) {
  for (Vec3 c : footprint_cells(p, catalog))
    if (placed.contains(c)) return true;
  return false;
}

bool supported(const Placement& p, const CellSet& placed, const Catalog& catalog,
               SupportRule rule) {
  if (p.pos.z == 0) return true;
  const Vec3 ext = rotated_extents(catalog.at(p.part_id).size, p.rot);
  const int top = p.pos.z + ext.z;
  for (int dy = 0; dy < ext.y; ++dy) {
    for (int dx = 0; dx < ext.x; ++dx) {
      const int x = p.pos.x + dx;
      const int y = p.pos.y + dy;
      if (placed.contains({x, y, p.pos.z - 1})) return true;
      if (rule.allow_underside_attach && placed.contains({x, y, top})) return true;
    }
  }
  return false;
}

bool placeable(const Placement& p, const CellSet& placed, const Catalog& catalog,
               SupportRule rule) {
  return !collides(p, placed, catalog) && supported(p, placed, catalog, rule);
}

void add_cells(CellSet& placed, const Placement& p, const Catalog& catalog) {
  for (Vec3 c : footprint_cells(p, catalog)) placed.insert(c);
}

namespace {

ValidityReport replay(std::span<const int> seq, const BrickModel& model, SupportRule rule,
                      bool require_complete) {
  const int n = static_cast<int>(model.placements.size());
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  CellSet placed;
  auto fail = [](std::size_t step, ViolationKind kind) {
    return ValidityReport{false, Violation{step, kind}};
  };
  for (std::size_t step = 0; step < seq.size(); ++step) {
    const int idx = seq[step];
    if (idx < 0 || idx >= n) return fail(step, ViolationKind::UnknownBrick);
    if (used[static_cast<std::size_t>(idx)]) return fail(step, ViolationKind::DuplicateBrick);
    const Placement& p = model.placements[static_cast<std::size_t>(idx)];
    if (collides(p, placed, model.catalog)) return fail(step, ViolationKind::Collision);
    if (!supported(p, placed, model.catalog, rule)) return fail(step, ViolationKind::Overhang);
    used[static_cast<std::size_t>(idx)] = true;
    add_cells(placed, p, model.catalog);
  }
  if (require_complete && seq.size() != static_cast<std::size_t>(n))
    return fail(seq.size(), ViolationKind::Incomplete);
  return {};
}

}  // namespace

ValidityReport validate_sequence(std::span<const int> seq, const BrickModel& model,
                                 SupportRule rule) {
  return replay(seq, model, rule, true);
}

ValidityReport validate_prefix(std::span<const int> seq, const BrickModel& model,
                               SupportRule rule) {
  return replay(seq, model, rule, false);
}

}  // namespace brickseq
