#include "brickseq/tokenize.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "brickseq/errors.hpp"

namespace brickseq {

namespace {

int floor_div(int a, int b) {
  int q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

void DiscretizationConfig::check() const {
  if (l_max < 1) throw std::invalid_argument("l_max must be >= 1");
  if (l.x < 1 || l.y < 1 || l.z < 1) throw std::invalid_argument("intrinsic lengths must be >= 1");
}

Vec3 discretize(RelativeOffset d, const DiscretizationConfig& cfg) {
  Vec3 pd;
  for (std::size_t j = 0; j < 3; ++j) {
    // floor(d/l + l_max/2) == floor((2d + l_max*l) / (2l)), exact in integers
    const int v = floor_div(2 * d[j] + cfg.l_max * cfg.l[j], 2 * cfg.l[j]);
    pd[j] = std::clamp(v, 0, cfg.l_max);
  }
  return pd;
}

RelativeOffset dediscretize(Vec3 pd, const DiscretizationConfig& cfg) {
  RelativeOffset d;
  for (std::size_t j = 0; j < 3; ++j) d[j] = (pd[j] - cfg.l_max / 2) * cfg.l[j];
  return d;
}

bool offset_in_range(RelativeOffset d, const DiscretizationConfig& cfg) {
  return dediscretize(discretize(d, cfg), cfg) == d;
}

Vocabulary::Vocabulary(std::vector<BrickToken> bricks, DiscretizationConfig cfg)
    : bricks_(std::move(bricks)), cfg_(cfg) {
  cfg_.check();
  std::sort(bricks_.begin(), bricks_.end());
  bricks_.erase(std::unique(bricks_.begin(), bricks_.end()), bricks_.end());
}

Vocabulary Vocabulary::from_models(std::span<const BrickModel> models, DiscretizationConfig cfg) {
  std::set<BrickToken> seen;
  for (const auto& m : models)
    for (const auto& p : m.placements) seen.insert({p.part_id, p.rot});
  return Vocabulary(std::vector<BrickToken>(seen.begin(), seen.end()), cfg);
}

TokenKind Vocabulary::kind(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
  if (id < special::count) return TokenKind::special;
  if (id < position_base()) return TokenKind::brick;
  return TokenKind::position;
}

std::optional<int> Vocabulary::brick_id(int part_id, Rotation rot) const {
  const BrickToken key{part_id, rot};
  auto it = std::lower_bound(bricks_.begin(), bricks_.end(), key);
  if (it == bricks_.end() || *it != key) return std::nullopt;
  return brick_base() + static_cast<int>(it - bricks_.begin());
}

BrickToken Vocabulary::brick_of(int id) const {
  if (id < brick_base() || id >= position_base())
    throw std::out_of_range("not a brick token: " + std::to_string(id));
  return bricks_[static_cast<std::size_t>(id - brick_base())];
}

int Vocabulary::position_token_id(Vec3 pd) const {
  const int r = cfg_.classes_per_axis();
  for (std::size_t j = 0; j < 3; ++j) {
    if (pd[j] < 0 || pd[j] > cfg_.l_max)
      throw InvalidClass("position class component out of [0, l_max]");
  }
  return position_base() + pd.x * r * r + pd.y * r + pd.z;
}

Vec3 Vocabulary::position_class(int id) const {
  const int local = id - position_base();
  if (local < 0 || local >= cfg_.class_count())
    throw InvalidClass("not a position token: " + std::to_string(id));
  const int r = cfg_.classes_per_axis();
  return {local / (r * r), (local / r) % r, local % r};
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json bricks = nlohmann::json::array();
  for (std::size_t i = 0; i < bricks_.size(); ++i) {
    bricks.push_back({{"part_id", bricks_[i].part_id},
                      {"rot", rotation_degrees(bricks_[i].rot)},
                      {"id", brick_base() + static_cast<int>(i)}});
  }
  return {{"l_max", cfg_.l_max},
          {"l", {cfg_.l.x, cfg_.l.y, cfg_.l.z}},
          {"brick_tokens", bricks},
          {"position_base", position_base()}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  DiscretizationConfig cfg;
  cfg.l_max = j.at("l_max").get<int>();
  const auto& l = j.at("l");
  cfg.l = {l.at(0).get<int>(), l.at(1).get<int>(), l.at(2).get<int>()};
  std::vector<std::pair<int, BrickToken>> by_id;
  for (const auto& b : j.at("brick_tokens")) {
    by_id.emplace_back(b.at("id").get<int>(),
                       BrickToken{b.at("part_id").get<int>(), rotation_from_degrees(b.at("rot").get<int>())});
  }
  std::vector<BrickToken> bricks;
  for (const auto& [id, tok] : by_id) bricks.push_back(tok);
  Vocabulary v(std::move(bricks), cfg);
  // The stored ids must agree with the canonical layout.
  for (const auto& [id, tok] : by_id) {
    if (v.brick_id(tok.part_id, tok.rot) != id)
      throw std::invalid_argument("vocabulary brick ids are not in canonical order");
  }
  if (j.at("position_base").get<int>() != v.position_base())
    throw std::invalid_argument("vocabulary position_base mismatch");
  return v;
}

TokenStream encode(const BrickModel& model, std::span<const int> seq, const Vocabulary& vocab,
                   bool close) {
  TokenStream s;
  auto push = [&](int id, TokenKind kind) {
    s.ids.push_back(id);
    s.kinds.push_back(kind);
  };
  push(special::BOS, TokenKind::special);
  const auto offsets = relative_offsets(seq, model);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Placement& p = model.placements.at(static_cast<std::size_t>(seq[i]));
    if (auto id = vocab.brick_id(p.part_id, p.rot)) {
      push(*id, TokenKind::brick);
    } else {
      push(special::UNK, TokenKind::brick);
      ++s.unknown_bricks;
    }
    if (i < offsets.size())
      push(vocab.position_token_id(discretize(offsets[i], vocab.discretization())), TokenKind::position);
  }
  if (close) push(special::EOS, TokenKind::special);
  return s;
}

std::vector<DecodedBrick> decode(std::span<const int> ids, Vec3 anchor, const Vocabulary& vocab) {
  if (ids.size() < 3 || ids.front() != special::BOS || ids.back() != special::EOS)
    throw MalformedStream("stream must be BOS, content, EOS");
  const auto content = ids.subspan(1, ids.size() - 2);
  if (content.size() % 2 == 0) throw MalformedStream("content must end on a brick token");

  std::vector<DecodedBrick> out;
  Vec3 pos = anchor;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const int id = content[i];
    const bool brick_slot = i % 2 == 0;
    if (id < 0 || id >= vocab.size()) throw MalformedStream("token id out of vocabulary");
    const TokenKind kind = vocab.kind(id);
    if (brick_slot) {
      if (id == special::UNK) {
        out.push_back({-1, Rotation::R0, pos});
      } else if (kind == TokenKind::brick) {
        const BrickToken b = vocab.brick_of(id);
        out.push_back({b.part_id, b.rot, pos});
      } else {
        throw MalformedStream("expected brick token at content index " + std::to_string(i));
      }
    } else {
      if (kind != TokenKind::position)
        throw MalformedStream("expected position token at content index " + std::to_string(i));
      pos = pos + dediscretize(vocab.position_class(id), vocab.discretization());
    }
  }
  return out;
}

void write_token_lines(std::ostream& out, std::span<const std::vector<int>> streams) {
  for (const auto& s : streams) out << nlohmann::json(s).dump() << '\n';
}

std::vector<std::vector<int>> read_token_lines(std::istream& in) {
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<std::vector<int>>());
  }
  return out;
}

}  // namespace brickseq
