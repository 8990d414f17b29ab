#include "brickseq/geometry.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "brickseq/errors.hpp"

namespace brickseq {

using nlohmann::json;

int rotation_degrees(Rotation r) { return static_cast<int>(r); }

Rotation rotation_from_degrees(int degrees) {
  if (degrees == 0) return Rotation::R0;
  if (degrees == 90) return Rotation::R90;
  throw InvalidModel("rotation must be 0 or 90, got " + std::to_string(degrees));
}

Vec3 rotated_extents(Vec3 size, Rotation rot) {
  if (rot == Rotation::R90) return {size.y, size.x, size.z};
  return size;
}

Catalog::Catalog(std::vector<PartShape> parts) : parts_(std::move(parts)) {
  std::sort(parts_.begin(), parts_.end(),
            [](const PartShape& a, const PartShape& b) { return a.part_id < b.part_id; });
}

bool Catalog::contains(int part_id) const {
  auto it = std::lower_bound(parts_.begin(), parts_.end(), part_id,
                             [](const PartShape& p, int id) { return p.part_id < id; });
  return it != parts_.end() && it->part_id == part_id;
}

const PartShape& Catalog::at(int part_id) const {
  auto it = std::lower_bound(parts_.begin(), parts_.end(), part_id,
                             [](const PartShape& p, int id) { return p.part_id < id; });
  if (it == parts_.end() || it->part_id != part_id) {
    throw UnknownPart("unknown part_id " + std::to_string(part_id));
  }
  return *it;
}

std::vector<Vec3> footprint_cells(const Placement& p, const Catalog& catalog) {
  const Vec3 ext = rotated_extents(catalog.at(p.part_id).size, p.rot);
  std::vector<Vec3> cells;
  cells.reserve(static_cast<std::size_t>(ext.x) * ext.y * ext.z);
  for (int dz = 0; dz < ext.z; ++dz)
    for (int dy = 0; dy < ext.y; ++dy)
      for (int dx = 0; dx < ext.x; ++dx) cells.push_back(p.pos + Vec3{dx, dy, dz});
  return cells;
}

std::vector<RelativeOffset> relative_offsets(std::span<const int> seq, const BrickModel& model) {
  std::vector<RelativeOffset> out;
  if (seq.size() < 2) return out;
  out.reserve(seq.size() - 1);
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    out.push_back(model.placements.at(seq[i + 1]).pos - model.placements.at(seq[i]).pos);
  }
  return out;
}

void check_model_structure(const BrickModel& model) {
  if (model.placements.empty()) throw InvalidModel("model has no placements");
  std::set<int> ids;
  for (const auto& part : model.catalog.parts()) {
    if (!ids.insert(part.part_id).second)
      throw InvalidModel("duplicate part_id " + std::to_string(part.part_id));
    if (part.size.x < 1 || part.size.y < 1 || part.size.z < 1)
      throw InvalidModel("part " + std::to_string(part.part_id) + " has non-positive size");
  }
  CellSet occupied;
  for (std::size_t i = 0; i < model.placements.size(); ++i) {
    const auto& p = model.placements[i];
    if (!model.catalog.contains(p.part_id))
      throw InvalidModel("placement " + std::to_string(i) + " references unknown part " +
                         std::to_string(p.part_id));
    if (p.pos.z < 0) throw InvalidModel("placement " + std::to_string(i) + " below baseplate");
    for (Vec3 c : footprint_cells(p, model.catalog)) {
      if (!occupied.insert(c).second)
        throw InvalidModel("placement " + std::to_string(i) + " overlaps an earlier placement");
    }
  }
}

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const char* where) {
  if (!obj.is_object()) throw InvalidModel(std::string(where) + ": expected object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; })) {
      throw InvalidModel(std::string(where) + ": unknown field '" + it.key() + "'");
    }
  }
  for (const char* k : allowed) {
    if (!obj.contains(k)) throw InvalidModel(std::string(where) + ": missing field '" + k + "'");
  }
}

Vec3 vec3_from(const json& j, const char* where) {
  if (!j.is_array() || j.size() != 3 || !j[0].is_number_integer() || !j[1].is_number_integer() ||
      !j[2].is_number_integer()) {
    throw InvalidModel(std::string(where) + ": expected [int,int,int]");
  }
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

json placement_json(const Placement& p) {
  return {{"part_id", p.part_id},
          {"pos", {p.pos.x, p.pos.y, p.pos.z}},
          {"rot", rotation_degrees(p.rot)}};
}

json to_json(const BrickModel& model) {
  json catalog = json::array();
  for (const auto& part : model.catalog.parts())
    catalog.push_back({{"part_id", part.part_id}, {"size", {part.size.x, part.size.y, part.size.z}}});
  json placements = json::array();
  for (const auto& p : model.placements) placements.push_back(placement_json(p));
  return {{"name", model.name}, {"catalog", catalog}, {"placements", placements}};
}

BrickModel model_from_json(const json& j) {
  reject_unknown(j, {"name", "catalog", "placements"}, "model");
  if (!j["name"].is_string()) throw InvalidModel("model: name must be a string");
  if (!j["catalog"].is_array() || !j["placements"].is_array())
    throw InvalidModel("model: catalog and placements must be arrays");

  std::vector<PartShape> parts;
  for (const auto& jp : j["catalog"]) {
    reject_unknown(jp, {"part_id", "size"}, "catalog entry");
    if (!jp["part_id"].is_number_integer()) throw InvalidModel("catalog entry: part_id must be int");
    parts.push_back({jp["part_id"].get<int>(), vec3_from(jp["size"], "catalog entry size")});
  }
  BrickModel model;
  model.name = j["name"].get<std::string>();
  model.catalog = Catalog(std::move(parts));
  for (const auto& jp : j["placements"]) {
    reject_unknown(jp, {"part_id", "pos", "rot"}, "placement");
    if (!jp["part_id"].is_number_integer() || !jp["rot"].is_number_integer())
      throw InvalidModel("placement: part_id and rot must be ints");
    model.placements.push_back({jp["part_id"].get<int>(), vec3_from(jp["pos"], "placement pos"),
                                rotation_from_degrees(jp["rot"].get<int>())});
  }
  check_model_structure(model);
  return model;
}

}  // namespace brickseq
