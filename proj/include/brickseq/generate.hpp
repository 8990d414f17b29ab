#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "brickseq/geometry.hpp"
#include "brickseq/tokenize.hpp"
#include "brickseq/transformer.hpp"
#include "brickseq/validity.hpp"

namespace brickseq {

// A partially built model. Occupancy and the open token stream are caches of
// the prefix and are kept in step with it by commit/undo.
class SessionState {
 public:
  SessionState(std::shared_ptr<const BrickModel> model, std::shared_ptr<const Vocabulary> vocab,
               SupportRule rule = {});

  const BrickModel& model() const { return *model_; }
  const Vocabulary* vocab() const { return vocab_.get(); }
  SupportRule rule() const { return rule_; }
  std::span<const int> prefix() const { return prefix_; }
  const CellSet& occupied() const { return occupied_; }
  // BOS followed by the interleaved prefix tokens, no EOS. Empty without a vocabulary.
  std::span<const int> tokens() const { return tokens_; }
  bool complete() const { return prefix_.size() == model_->size(); }
  bool is_used(int index) const { return used_.at(static_cast<std::size_t>(index)); }
  bool has_unknown_bricks() const { return has_unknown_; }

  std::vector<int> frontier() const;
  bool legal(int index) const;

  // Throws InvalidChoice for out-of-range, already placed, colliding or unsupported choices.
  void commit(int index);
  // Throws InvalidChoice when the prefix is empty.
  void undo();

  // Recomputes every cache from the prefix and compares.
  bool caches_consistent() const;
  // FNV-1a over the prefix.
  std::uint64_t state_hash() const;

  friend bool operator==(const SessionState& a, const SessionState& b);

 private:
  std::shared_ptr<const BrickModel> model_;
  std::shared_ptr<const Vocabulary> vocab_;
  SupportRule rule_;
  std::vector<int> prefix_;
  std::vector<bool> used_;
  CellSet occupied_;
  std::vector<int> tokens_;
  std::vector<std::size_t> history_;  // token count before each commit
  bool has_unknown_ = false;
};

struct TokenDistribution {
  TokenKind slot = TokenKind::brick;
  std::vector<int> ids;
  std::vector<double> probs;  // aligned with ids, sums to 1

  double prob_of(int id) const;
};

struct GenerationConfig {
  // Number of position classes expanded into brick predictions per step.
  std::size_t position_beam = 8;
  EncoderOptions encoder{};
};

// Appends MASK at the next slot, runs the encoder, restricts to the slot's
// sub-vocabulary and renormalizes. Throws SequenceTooLong.
TokenDistribution next_token_distribution(const LMParams& params, const SessionState& state,
                                          const GenerationConfig& cfg = {});

struct Candidate {
  int placement = -1;
  double prob = 0.0;
  int position_token = -1;  // -1 for the first brick (no offset)
  int brick_token = -1;
};

struct CandidateSet {
  std::vector<Candidate> candidates;
  bool truncated = false;
};

// Legal next placements scored by P(position) * P(brick | position), ranked,
// renormalized over every scored survivor and cut to k. Throws
// NoValidCandidate when the model is incomplete and nothing is legal.
CandidateSet next_brick_candidates(const LMParams& params, const SessionState& state, std::size_t k,
                                   const GenerationConfig& cfg = {});

// Model-free ranking of the frontier: uniform probabilities, (z, y, x, part_id) order.
CandidateSet oracle_candidates(const SessionState& state, std::size_t k);

SessionState commit_step(SessionState state, int choice);

enum class DecodeMode { greedy, sampled };

struct GenerationResult {
  AssemblySequence sequence;  // prefix followed by generated steps
  std::size_t prefix_len = 0;
  bool truncated = false;  // stopped early on NoValidCandidate
};

GenerationResult generate_conditional(const LMParams& params, std::shared_ptr<const BrickModel> model,
                                      std::shared_ptr<const Vocabulary> vocab,
                                      std::span<const int> reference, std::size_t prefix_len,
                                      std::size_t horizon, DecodeMode mode, std::uint64_t seed = 0,
                                      const GenerationConfig& cfg = {});

// Uniform choice over the frontier at every step; the baseline for metrics.
GenerationResult generate_random_valid(std::shared_ptr<const BrickModel> model,
                                       std::span<const int> reference, std::size_t prefix_len,
                                       std::size_t horizon, std::uint64_t seed);

}  // namespace brickseq
