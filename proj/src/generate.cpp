#include "brickseq/generate.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <tuple>

#include "brickseq/errors.hpp"
#include "brickseq/oracle.hpp"

namespace brickseq {

SessionState::SessionState(std::shared_ptr<const BrickModel> model,
                           std::shared_ptr<const Vocabulary> vocab, SupportRule rule)
    : model_(std::move(model)), vocab_(std::move(vocab)), rule_(rule), used_(model_->size(), false) {
  if (vocab_) {
    tokens_.push_back(special::BOS);
    for (const auto& p : model_->placements)
      if (!vocab_->brick_id(p.part_id, p.rot)) has_unknown_ = true;
  }
}

std::vector<int> SessionState::frontier() const {
  return brickseq::frontier(*model_, used_, occupied_, rule_);
}

bool SessionState::legal(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= model_->size()) return false;
  if (used_[static_cast<std::size_t>(index)]) return false;
  return placeable(model_->placements[static_cast<std::size_t>(index)], occupied_, model_->catalog, rule_);
}

void SessionState::commit(int index) {
  if (!legal(index)) throw InvalidChoice("placement " + std::to_string(index) + " is not a legal next step");
  const Placement& p = model_->placements[static_cast<std::size_t>(index)];
  history_.push_back(tokens_.size());
  if (vocab_) {
    if (!prefix_.empty()) {
      const Vec3 d = p.pos - model_->placements[static_cast<std::size_t>(prefix_.back())].pos;
      tokens_.push_back(vocab_->position_token_id(discretize(d, vocab_->discretization())));
    }
    tokens_.push_back(vocab_->brick_id(p.part_id, p.rot).value_or(special::UNK));
  }
  prefix_.push_back(index);
  used_[static_cast<std::size_t>(index)] = true;
  add_cells(occupied_, p, model_->catalog);
}

void SessionState::undo() {
  if (prefix_.empty()) throw InvalidChoice("nothing to undo");
  const int index = prefix_.back();
  prefix_.pop_back();
  used_[static_cast<std::size_t>(index)] = false;
  for (Vec3 c : footprint_cells(model_->placements[static_cast<std::size_t>(index)], model_->catalog))
    occupied_.erase(c);
  tokens_.resize(history_.back());
  history_.pop_back();
}

bool SessionState::caches_consistent() const {
  SessionState fresh(model_, vocab_, rule_);
  for (int idx : prefix_) {
    if (!fresh.legal(idx)) return false;
    fresh.commit(idx);
  }
  return fresh == *this;
}

std::uint64_t SessionState::state_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(prefix_.size());
  for (int idx : prefix_) mix(static_cast<std::uint64_t>(idx));
  return h;
}

bool operator==(const SessionState& a, const SessionState& b) {
  return *a.model_ == *b.model_ && a.prefix_ == b.prefix_ && a.used_ == b.used_ &&
         a.occupied_ == b.occupied_ && a.tokens_ == b.tokens_ && a.history_ == b.history_;
}

double TokenDistribution::prob_of(int id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  return it == ids.end() ? 0.0 : probs[static_cast<std::size_t>(it - ids.begin())];
}

namespace {

std::vector<int> slot_vocabulary(const Vocabulary& vocab, TokenKind slot, bool with_unknown) {
  std::vector<int> ids;
  if (slot == TokenKind::position) {
    for (int i = 0; i < vocab.position_count(); ++i) ids.push_back(vocab.position_base() + i);
  } else {
    if (with_unknown) ids.push_back(special::UNK);
    for (int i = 0; i < vocab.brick_count(); ++i) ids.push_back(vocab.brick_base() + i);
  }
  return ids;
}

// Softmax of the encoder's logits at the final (MASK) slot, restricted to ids.
TokenDistribution masked_slot(const LMParams& params, std::vector<int> stream, TokenKind slot,
                              const Vocabulary& vocab, bool with_unknown, const EncoderOptions& enc) {
  stream.push_back(special::MASK);
  if (stream.size() > static_cast<std::size_t>(params.config().max_seq_len))
    throw SequenceTooLong("generation stream of length " + std::to_string(stream.size()) +
                          " exceeds max_seq_len");
  const int last = static_cast<int>(stream.size() - 1);
  const auto z = logits(params, stream, std::span<const int>(&last, 1), enc).front();

  TokenDistribution d;
  d.slot = slot;
  d.ids = slot_vocabulary(vocab, slot, with_unknown);
  double mx = -INFINITY;
  for (int id : d.ids) mx = std::max(mx, z[static_cast<std::size_t>(id)]);
  double sum = 0.0;
  d.probs.reserve(d.ids.size());
  for (int id : d.ids) {
    d.probs.push_back(std::exp(z[static_cast<std::size_t>(id)] - mx));
    sum += d.probs.back();
  }
  for (double& p : d.probs) p /= sum;
  return d;
}

const Vocabulary& require_vocab(const SessionState& state) {
  if (!state.vocab()) throw ConfigMismatch("session has no vocabulary");
  return *state.vocab();
}

void rank_and_cut(CandidateSet& set, std::size_t k) {
  double total = 0.0;
  for (const auto& c : set.candidates) total += c.prob;
  for (auto& c : set.candidates) c.prob /= total;
  std::stable_sort(set.candidates.begin(), set.candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.prob != b.prob) return a.prob > b.prob;
    return a.placement < b.placement;
  });
  if (set.candidates.size() > k) {
    set.candidates.resize(k);
    set.truncated = true;
  }
}

}  // namespace

TokenDistribution next_token_distribution(const LMParams& params, const SessionState& state,
                                          const GenerationConfig& cfg) {
  const Vocabulary& vocab = require_vocab(state);
  const TokenKind slot = state.prefix().empty() ? TokenKind::brick : TokenKind::position;
  std::vector<int> stream(state.tokens().begin(), state.tokens().end());
  return masked_slot(params, std::move(stream), slot, vocab, state.has_unknown_bricks(), cfg.encoder);
}

CandidateSet next_brick_candidates(const LMParams& params, const SessionState& state, std::size_t k,
                                   const GenerationConfig& cfg) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const Vocabulary& vocab = require_vocab(state);
  CandidateSet set;
  if (state.complete()) return set;
  const auto front = state.frontier();
  if (front.empty()) throw NoValidCandidate("no legal placement extends the current prefix");

  const BrickModel& model = state.model();
  auto brick_token = [&](int idx) {
    const Placement& p = model.placements[static_cast<std::size_t>(idx)];
    return vocab.brick_id(p.part_id, p.rot).value_or(special::UNK);
  };
  const bool unknown = state.has_unknown_bricks();
  std::vector<int> stream(state.tokens().begin(), state.tokens().end());

  if (state.prefix().empty()) {
    const auto bricks = masked_slot(params, stream, TokenKind::brick, vocab, unknown, cfg.encoder);
    for (int idx : front) {
      const int tok = brick_token(idx);
      set.candidates.push_back({idx, bricks.prob_of(tok), -1, tok});
    }
    rank_and_cut(set, k);
    return set;
  }

  // Group the frontier by the position token it would produce.
  const Vec3 last = model.placements[static_cast<std::size_t>(state.prefix().back())].pos;
  std::map<int, std::vector<int>> by_class;
  for (int idx : front) {
    const Vec3 d = model.placements[static_cast<std::size_t>(idx)].pos - last;
    by_class[vocab.position_token_id(discretize(d, vocab.discretization()))].push_back(idx);
  }

  const auto positions = masked_slot(params, stream, TokenKind::position, vocab, unknown, cfg.encoder);
  std::vector<std::pair<int, double>> classes;
  for (const auto& [tok, members] : by_class) classes.emplace_back(tok, positions.prob_of(tok));
  std::stable_sort(classes.begin(), classes.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t beam = std::max<std::size_t>(1, cfg.position_beam);
  if (classes.size() > beam) {
    classes.resize(beam);
    set.truncated = true;
  }

  // Each expanded class needs its own encoder pass; they share parameters read-only.
  std::vector<TokenDistribution> brick_dists(classes.size());
#pragma omp parallel for schedule(dynamic) if (classes.size() > 1)
  for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(classes.size()); ++c) {
    auto extended = stream;
    extended.push_back(classes[static_cast<std::size_t>(c)].first);
    brick_dists[static_cast<std::size_t>(c)] =
        masked_slot(params, std::move(extended), TokenKind::brick, vocab, unknown, cfg.encoder);
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto [pos_tok, pos_prob] = classes[c];
    for (int idx : by_class[pos_tok]) {
      const int tok = brick_token(idx);
      set.candidates.push_back({idx, pos_prob * brick_dists[c].prob_of(tok), pos_tok, tok});
    }
  }
  const bool cut = set.truncated;
  rank_and_cut(set, k);
  set.truncated = set.truncated || cut;
  return set;
}

CandidateSet oracle_candidates(const SessionState& state, std::size_t k) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  CandidateSet set;
  if (state.complete()) return set;
  auto front = state.frontier();
  if (front.empty()) throw NoValidCandidate("no legal placement extends the current prefix");
  const BrickModel& model = state.model();
  auto key = [&](int idx) {
    const Placement& p = model.placements[static_cast<std::size_t>(idx)];
    return std::make_tuple(p.pos.z, p.pos.y, p.pos.x, p.part_id, idx);
  };
  std::sort(front.begin(), front.end(), [&](int a, int b) { return key(a) < key(b); });
  const double p = 1.0 / static_cast<double>(front.size());
  for (int idx : front) set.candidates.push_back({idx, p, -1, -1});
  if (set.candidates.size() > k) {
    set.candidates.resize(k);
    set.truncated = true;
  }
  return set;
}

SessionState commit_step(SessionState state, int choice) {
  state.commit(choice);
  return state;
}

namespace {

SessionState replay_prefix(std::shared_ptr<const BrickModel> model, std::shared_ptr<const Vocabulary> vocab,
                           std::span<const int> reference, std::size_t prefix_len) {
  if (prefix_len > reference.size()) throw std::invalid_argument("prefix longer than the reference");
  SessionState state(std::move(model), std::move(vocab));
  for (std::size_t i = 0; i < prefix_len; ++i) state.commit(reference[i]);
  return state;
}

int sample_candidate(const CandidateSet& set, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (const auto& c : set.candidates) {
    acc += c.prob;
    if (u < acc) return c.placement;
  }
  return set.candidates.back().placement;
}

}  // namespace

GenerationResult generate_conditional(const LMParams& params, std::shared_ptr<const BrickModel> model,
                                      std::shared_ptr<const Vocabulary> vocab,
                                      std::span<const int> reference, std::size_t prefix_len,
                                      std::size_t horizon, DecodeMode mode, std::uint64_t seed,
                                      const GenerationConfig& cfg) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  SessionState state = replay_prefix(std::move(model), std::move(vocab), reference, prefix_len);
  std::mt19937_64 rng(seed);
  GenerationResult out;
  out.prefix_len = prefix_len;
  const std::size_t all = state.model().size();
  for (std::size_t step = 0; step < horizon && !state.complete(); ++step) {
    CandidateSet set;
    try {
      set = next_brick_candidates(params, state, all, cfg);
    } catch (const NoValidCandidate&) {
      out.truncated = true;
      break;
    }
    const int choice = mode == DecodeMode::greedy ? set.candidates.front().placement
                                                  : sample_candidate(set, rng);
    state.commit(choice);
  }
  out.sequence.assign(state.prefix().begin(), state.prefix().end());
  return out;
}

GenerationResult generate_random_valid(std::shared_ptr<const BrickModel> model,
                                       std::span<const int> reference, std::size_t prefix_len,
                                       std::size_t horizon, std::uint64_t seed) {
  SessionState state = replay_prefix(std::move(model), nullptr, reference, prefix_len);
  std::mt19937_64 rng(seed);
  GenerationResult out;
  out.prefix_len = prefix_len;
  for (std::size_t step = 0; step < horizon && !state.complete(); ++step) {
    const auto front = state.frontier();
    if (front.empty()) {
      out.truncated = true;
      break;
    }
    state.commit(front[std::uniform_int_distribution<std::size_t>(0, front.size() - 1)(rng)]);
  }
  out.sequence.assign(state.prefix().begin(), state.prefix().end());
  return out;
}

}  // namespace brickseq
