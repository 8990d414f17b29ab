#include <numeric>
#include <set>

#include "brickseq/datasets.hpp"
#include "brickseq/errors.hpp"
#include "brickseq/generate.hpp"
#include "brickseq/oracle.hpp"
#include "brickseq/train.hpp"
#include "brickseq/validity.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace brickseq;

namespace {

struct Setup {
  std::shared_ptr<const BrickModel> model;
  std::shared_ptr<const Vocabulary> vocab;
  LMParams params;

  explicit Setup(BrickModel m, std::uint64_t seed = 1) {
    model = std::make_shared<const BrickModel>(std::move(m));
    vocab = std::make_shared<const Vocabulary>(Vocabulary::from_models(std::span<const BrickModel>(model.get(), 1), {}));
    LMConfig cfg = LMConfig::tiny(vocab->size());
    cfg.max_seq_len = 256;
    params = LMParams::random(cfg, seed, 0.5);
  }
};

}  // namespace

TEST_SUITE("generate") {
  TEST_CASE("commit and undo keep every cache consistent") {
    Setup s(synth_model(ModelKind::pyramid, 14, 2));
    SessionState st(s.model, s.vocab);
    const auto order = order_sequence(*s.model, 0, OrderStrategy::deterministic);
    std::vector<SessionState> history{st};
    for (int idx : order) {
      st.commit(idx);
      CHECK(st.caches_consistent());
      history.push_back(st);
    }
    CHECK(st.complete());
    CHECK(st.tokens().size() == 2 * order.size());
    while (!st.prefix().empty()) {
      history.pop_back();
      st.undo();
      CHECK(st.caches_consistent());
      CHECK(st == history.back());
      CHECK(st.state_hash() == history.back().state_hash());
    }
    CHECK_THROWS_AS(st.undo(), InvalidChoice);
  }

  TEST_CASE("illegal commits are refused without changing the state") {
    Setup s(testutil::tower(3));
    SessionState st(s.model, s.vocab);
    CHECK_THROWS_AS(st.commit(2), InvalidChoice);
    CHECK_THROWS_AS(st.commit(7), InvalidChoice);
    st.commit(0);
    CHECK_THROWS_AS(st.commit(0), InvalidChoice);
    CHECK(st.prefix().size() == 1);
    CHECK(st.caches_consistent());
  }

  TEST_CASE("next token distribution follows the slot kind") {
    Setup s(testutil::bridge());
    SessionState st(s.model, s.vocab);
    auto d = next_token_distribution(s.params, st);
    CHECK(d.slot == TokenKind::brick);
    CHECK(std::accumulate(d.probs.begin(), d.probs.end(), 0.0) == doctest::Approx(1.0));
    for (int id : d.ids) CHECK(s.vocab->kind(id) == TokenKind::brick);
    st.commit(0);
    d = next_token_distribution(s.params, st);
    CHECK(d.slot == TokenKind::position);
    CHECK(d.ids.size() == static_cast<std::size_t>(s.vocab->position_count()));
  }

  TEST_CASE("candidates are legal, ranked, and renormalized") {
    Setup s(synth_model(ModelKind::wall, 20, 3));
    SessionState st(s.model, s.vocab);
    const auto order = order_sequence(*s.model, 0, OrderStrategy::deterministic);
    for (std::size_t i = 0; i < 6; ++i) st.commit(order[i]);
    const auto all = next_brick_candidates(s.params, st, 1000);
    const auto front = st.frontier();
    double total = 0;
    for (std::size_t i = 0; i < all.candidates.size(); ++i) {
      CHECK(st.legal(all.candidates[i].placement));
      total += all.candidates[i].prob;
      if (i > 0) CHECK(all.candidates[i - 1].prob >= all.candidates[i].prob);
    }
    CHECK(total == doctest::Approx(1.0));
    CHECK(all.candidates.size() <= front.size());
    const auto top2 = next_brick_candidates(s.params, st, 2);
    REQUIRE(top2.candidates.size() == 2);
    CHECK(top2.truncated);
    CHECK(top2.candidates[0].placement == all.candidates[0].placement);
    CHECK(top2.candidates[1].placement == all.candidates[1].placement);
  }

  TEST_CASE("a single legal placement yields exactly one candidate") {
    Setup s(testutil::tower(5));
    SessionState st(s.model, s.vocab);
    st.commit(0);
    const auto set = next_brick_candidates(s.params, st, 3);
    REQUIRE(set.candidates.size() == 1);
    CHECK(set.candidates[0].placement == 1);
    CHECK(set.candidates[0].prob == doctest::Approx(1.0));
  }

  TEST_CASE("dead ends raise NoValidCandidate, a finished model returns nothing") {
    BrickModel m = testutil::tower(2);
    m.placements[1].pos.z = 4;
    Setup s(m);
    SessionState st(s.model, s.vocab);
    st.commit(0);
    CHECK_THROWS_AS(next_brick_candidates(s.params, st, 3), NoValidCandidate);
    CHECK_THROWS_AS(oracle_candidates(st, 3), NoValidCandidate);

    Setup t(testutil::tower(1));
    SessionState done(t.model, t.vocab);
    done.commit(0);
    CHECK(next_brick_candidates(t.params, done, 3).candidates.empty());
  }

  TEST_CASE("oracle candidates are uniform in deterministic order") {
    Setup s(testutil::bridge());
    SessionState st(s.model, s.vocab);
    const auto set = oracle_candidates(st, 5);
    REQUIRE(set.candidates.size() == 2);
    CHECK(set.candidates[0].placement == 0);
    CHECK(set.candidates[0].prob == doctest::Approx(0.5));
  }

  TEST_CASE("conditional generation keeps the prefix and only emits valid steps") {
    Setup s(synth_model(ModelKind::random_stack, 25, 4));
    const auto ref = order_sequence(*s.model, 0, OrderStrategy::deterministic);
    for (auto mode : {DecodeMode::greedy, DecodeMode::sampled}) {
      const auto r = generate_conditional(s.params, s.model, s.vocab, ref, 10, 80, mode, 3);
      CHECK(std::equal(ref.begin(), ref.begin() + 10, r.sequence.begin()));
      CHECK(r.sequence.size() == s.model->size());
      CHECK(validate_sequence(r.sequence, *s.model).ok);
    }
    const auto a = generate_conditional(s.params, s.model, s.vocab, ref, 5, 4, DecodeMode::greedy, 1);
    const auto b = generate_conditional(s.params, s.model, s.vocab, ref, 5, 4, DecodeMode::greedy, 2);
    CHECK(a.sequence == b.sequence);
    CHECK(a.sequence.size() == 9);
    const auto rnd = generate_random_valid(s.model, ref, 5, 100, 7);
    CHECK(validate_sequence(rnd.sequence, *s.model).ok);
  }

  TEST_CASE("uniform model gives a uniform sub-vocabulary, a single brick token gets probability one") {
    Setup s(testutil::bridge());
    const LMParams zero(s.params.config());
    SessionState st(s.model, s.vocab);
    st.commit(0);
    const auto d = next_token_distribution(zero, st);
    for (double p : d.probs) CHECK(p == doctest::Approx(1.0 / s.vocab->position_count()));

    Setup one(testutil::tower(3));
    REQUIRE(one.vocab->brick_count() == 1);
    SessionState t(one.model, one.vocab);
    const auto b = next_token_distribution(one.params, t);
    REQUIRE(b.ids.size() == 1);
    CHECK(b.probs[0] == doctest::Approx(1.0));
  }

  TEST_CASE("small models: offered placements equal the brute-force frontier at every step") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Setup s(synth_model(static_cast<ModelKind>(seed % 4), 2 + static_cast<int>(seed % 5), seed), seed);
      SessionState st(s.model, s.vocab);
      const auto order = order_sequence(*s.model, seed, OrderStrategy::randomized);
      for (int next : order) {
        std::set<int> expected;
        for (int i = 0; i < static_cast<int>(s.model->size()); ++i) {
          if (st.is_used(i)) continue;
          const auto prefix = std::vector<int>(st.prefix().begin(), st.prefix().end());
          auto extended = prefix;
          extended.push_back(i);
          if (validate_prefix(extended, *s.model).ok) expected.insert(i);
        }
        std::set<int> offered;
        for (const auto& c : next_brick_candidates(s.params, st, 100).candidates) {
          offered.insert(c.placement);
          CHECK(c.prob > 0.0);
          CHECK(c.prob <= 1.0);
        }
        CHECK(offered == expected);
        st.commit(next);
      }
    }
  }

  TEST_CASE("four-brick plate: top three candidates all lie on the frontier") {
    BrickModel plate{"plate", testutil::unit_catalog(),
                     {{3, {0, 0, 0}, Rotation::R0}, {3, {2, 0, 0}, Rotation::R0}, {3, {0, 2, 0}, Rotation::R0},
                      {3, {2, 2, 0}, Rotation::R0}}};
    Setup s(plate);
    SessionState st(s.model, s.vocab);
    st.commit(0);
    const auto set = next_brick_candidates(s.params, st, 3);
    CHECK(set.candidates.size() == 3);
    const auto front = st.frontier();
    for (const auto& c : set.candidates) CHECK(std::find(front.begin(), front.end(), c.placement) != front.end());
  }

  TEST_CASE("horizon saturates at completion and a full prefix is returned unchanged") {
    Setup s(testutil::tower(6));
    const std::vector<int> ref{0, 1, 2, 3, 4, 5};
    CHECK(generate_conditional(s.params, s.model, s.vocab, ref, 2, 50, DecodeMode::greedy).sequence == ref);
    const auto full = generate_conditional(s.params, s.model, s.vocab, ref, 6, 5, DecodeMode::greedy);
    CHECK(full.sequence == ref);
    CHECK_FALSE(full.truncated);
  }

  TEST_CASE("an overfit model regenerates its memorized order") {
    const BrickModel m = synth_model(ModelKind::random_stack, 10, 6);
    Setup s(m);
    const auto order = order_sequence(m, 3, OrderStrategy::randomized);
    const std::vector<std::vector<int>> corpus{encode(m, order, *s.vocab).ids};
    TrainConfig tc;
    tc.steps = 400;
    tc.batch_size = 1;
    tc.learning_rate = 3e-3;
    tc.prefix_fraction = 0.8;
    const auto trained = train(LMParams::random(s.params.config(), 2), corpus, *s.vocab, tc).params;
    const auto gen = generate_conditional(trained, s.model, s.vocab, order, 2, 80, DecodeMode::greedy);
    CHECK(gen.sequence == order);
  }
}
