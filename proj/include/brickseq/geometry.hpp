#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"

namespace brickseq {

// Integer grid coordinate. x and y are in studs, z in plates.
struct Vec3 {
  int x = 0;
  int y = 0;
  int z = 0;

  int operator[](std::size_t axis) const { return axis == 0 ? x : axis == 1 ? y : z; }
  int& operator[](std::size_t axis) { return axis == 0 ? x : axis == 1 ? y : z; }

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend bool operator==(Vec3, Vec3) = default;
  friend auto operator<=>(Vec3, Vec3) = default;
};

struct Vec3Hash {
  std::size_t operator()(Vec3 v) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(v.x);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(v.y);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(v.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

using CellSet = std::unordered_set<Vec3, Vec3Hash>;

enum class Rotation : std::uint8_t { R0 = 0, R90 = 90 };

int rotation_degrees(Rotation r);
Rotation rotation_from_degrees(int degrees);

struct PartShape {
  int part_id = 0;
  Vec3 size{1, 1, 1};  // studs x, studs y, plates z

  friend bool operator==(const PartShape&, const PartShape&) = default;
};

struct Placement {
  int part_id = 0;
  Vec3 pos;  // min corner
  Rotation rot = Rotation::R0;

  friend bool operator==(const Placement&, const Placement&) = default;
};

// Extents after rotation about the vertical axis.
Vec3 rotated_extents(Vec3 size, Rotation rot);

class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<PartShape> parts);

  const PartShape& at(int part_id) const;  // throws UnknownPart
  bool contains(int part_id) const;
  std::span<const PartShape> parts() const { return parts_; }

  friend bool operator==(const Catalog&, const Catalog&) = default;

 private:
  std::vector<PartShape> parts_;
};

struct BrickModel {
  std::string name;
  Catalog catalog;
  std::vector<Placement> placements;

  std::size_t size() const { return placements.size(); }
  friend bool operator==(const BrickModel&, const BrickModel&) = default;
};

// Placement indices into BrickModel::placements, in build order.
using AssemblySequence = std::vector<int>;

using RelativeOffset = Vec3;

std::vector<Vec3> footprint_cells(const Placement& p, const Catalog& catalog);

// pos[seq[i+1]] - pos[seq[i]] for each adjacent pair; empty for fewer than two.
std::vector<RelativeOffset> relative_offsets(std::span<const int> seq, const BrickModel& model);

// Structural checks: non-empty, unique part ids, positive sizes, resolvable
// parts, z >= 0 and pairwise disjoint footprints. Throws InvalidModel.
void check_model_structure(const BrickModel& model);

nlohmann::json to_json(const BrickModel& model);
BrickModel model_from_json(const nlohmann::json& j);  // throws InvalidModel
nlohmann::json placement_json(const Placement& p);

}  // namespace brickseq
