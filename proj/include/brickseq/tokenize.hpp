#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "brickseq/geometry.hpp"
#include "json.hpp"

namespace brickseq {

struct DiscretizationConfig {
  Vec3 l{1, 1, 1};  // intrinsic length per axis, grid units
  int l_max = 8;

  int classes_per_axis() const { return l_max + 1; }
  int class_count() const { return classes_per_axis() * classes_per_axis() * classes_per_axis(); }
  void check() const;  // throws std::invalid_argument
};

// Componentwise clamp(floor(d_j / l_j + l_max / 2), 0, l_max), true floor.
Vec3 discretize(RelativeOffset d, const DiscretizationConfig& cfg);

// (pd_j - floor(l_max / 2)) * l_j. Inverse of discretize for unclamped,
// evenly divisible offsets.
RelativeOffset dediscretize(Vec3 pd, const DiscretizationConfig& cfg);

// True when discretize(d) loses nothing (no clamping, exact division).
bool offset_in_range(RelativeOffset d, const DiscretizationConfig& cfg);

enum class TokenKind : std::uint8_t { special, brick, position };

namespace special {
inline constexpr int PAD = 0;
inline constexpr int MASK = 1;
inline constexpr int BOS = 2;
inline constexpr int EOS = 3;
inline constexpr int UNK = 4;
inline constexpr int count = 5;
}  // namespace special

struct BrickToken {
  int part_id = 0;
  Rotation rot = Rotation::R0;
  friend auto operator<=>(const BrickToken&, const BrickToken&) = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<BrickToken> bricks, DiscretizationConfig cfg);

  static Vocabulary from_models(std::span<const BrickModel> models, DiscretizationConfig cfg);

  const DiscretizationConfig& discretization() const { return cfg_; }
  int size() const { return position_base() + cfg_.class_count(); }
  int brick_base() const { return special::count; }
  int brick_count() const { return static_cast<int>(bricks_.size()); }
  int position_base() const { return special::count + brick_count(); }
  int position_count() const { return cfg_.class_count(); }

  TokenKind kind(int id) const;  // throws std::out_of_range
  std::optional<int> brick_id(int part_id, Rotation rot) const;
  BrickToken brick_of(int id) const;
  std::span<const BrickToken> bricks() const { return bricks_; }

  // base + pd_1 * (l_max+1)^2 + pd_2 * (l_max+1) + pd_3. Throws InvalidClass.
  int position_token_id(Vec3 pd) const;
  Vec3 position_class(int id) const;  // throws InvalidClass

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.bricks_ == b.bricks_ && a.cfg_.l == b.cfg_.l && a.cfg_.l_max == b.cfg_.l_max;
  }

 private:
  std::vector<BrickToken> bricks_;  // sorted; id = brick_base() + index
  DiscretizationConfig cfg_;
};

struct TokenStream {
  std::vector<int> ids;
  std::vector<TokenKind> kinds;
  std::size_t unknown_bricks = 0;  // UNK emitted for bricks missing from the vocabulary

  std::size_t size() const { return ids.size(); }
};

// BOS, brick, pos, brick, ..., brick, EOS. With close = false the EOS is
// omitted, giving the open prefix form used during generation.
TokenStream encode(const BrickModel& model, std::span<const int> seq, const Vocabulary& vocab,
                   bool close = true);

struct DecodedBrick {
  int part_id = -1;  // -1 for UNK
  Rotation rot = Rotation::R0;
  Vec3 pos;
  friend bool operator==(const DecodedBrick&, const DecodedBrick&) = default;
};

// First brick lands on `anchor`; later ones accumulate dediscretized offsets.
// Throws MalformedStream.
std::vector<DecodedBrick> decode(std::span<const int> ids, Vec3 anchor, const Vocabulary& vocab);

// One JSON array of ids per line.
void write_token_lines(std::ostream& out, std::span<const std::vector<int>> streams);
std::vector<std::vector<int>> read_token_lines(std::istream& in);

}  // namespace brickseq
