// Acceptance suite: one line per criterion, exit status 1 if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "brickseq/checkpoint.hpp"
#include "brickseq/datasets.hpp"
#include "brickseq/errors.hpp"
#include "brickseq/generate.hpp"
#include "brickseq/metrics.hpp"
#include "brickseq/oracle.hpp"
#include "brickseq/service.hpp"
#include "brickseq/tokenize.hpp"
#include "brickseq/train.hpp"
#include "brickseq/validity.hpp"
#include "httplib.h"
#include "../unit/gradcheck.hpp"
#include "../unit/metric_oracles.hpp"

using namespace brickseq;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

template <typename... Args>
std::string line(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int failures = 0;

// time_limit <= 0 means the criterion states no runtime bound.
void criterion(const std::string& name, double time_limit, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = seconds_since(t0);
  if (time_limit > 0 && secs >= time_limit) {
    o.pass = false;
    o.detail += line(" | over the %.0f s limit", time_limit);
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-34s %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

// ---------------------------------------------------------------------------

struct ClassCase {
  Vec3 d;
  Vec3 l;
  int l_max;
  Vec3 expected;
};

// Evaluated by hand from clamp(floor(d/l + l_max/2), 0, l_max) per axis.
const std::vector<ClassCase> kClassCases = {
    {{0, 0, 0}, {1, 1, 1}, 8, {4, 4, 4}},
    {{3, -2, 1}, {1, 1, 1}, 8, {7, 2, 5}},
    {{100, 0, -100}, {1, 1, 1}, 8, {8, 4, 0}},
    {{4, -4, 0}, {1, 1, 1}, 8, {8, 0, 4}},
    {{5, -5, 3}, {1, 1, 1}, 8, {8, 0, 7}},
    {{-1, 1, -3}, {1, 1, 1}, 8, {3, 5, 1}},
    {{1, -1, 2}, {2, 2, 3}, 8, {4, 3, 4}},
    {{-3, 3, -4}, {2, 2, 3}, 8, {2, 5, 2}},
    {{8, -8, 12}, {2, 2, 3}, 8, {8, 0, 8}},
    {{9, -9, 13}, {2, 2, 3}, 8, {8, 0, 8}},
    {{1, -1, 2}, {1, 1, 1}, 4, {3, 1, 4}},
    {{-2, 3, -3}, {1, 1, 1}, 4, {0, 4, 0}},
    {{0, 0, 0}, {1, 1, 1}, 3, {1, 1, 1}},
    {{1, -1, 2}, {1, 1, 1}, 3, {2, 0, 3}},
    {{-2, 5, -1}, {1, 1, 1}, 3, {0, 3, 0}},
    {{0, -1, 1}, {1, 1, 1}, 1, {0, 0, 1}},
    {{2, -2, 0}, {1, 1, 1}, 1, {1, 0, 0}},
    {{-1, -2, -3}, {3, 3, 3}, 8, {3, 3, 3}},
    {{1, 2, -13}, {3, 3, 3}, 8, {4, 4, 0}},
    {{-12, 12, 13}, {3, 3, 3}, 8, {0, 8, 8}},
    {{-1, 1, 0}, {1, 1, 1}, 2, {0, 2, 1}},
    {{-2, 3, 1}, {1, 1, 1}, 2, {0, 2, 2}},
};

Outcome class_reference_suite() {
  std::size_t ok = 0;
  std::string first_bad;
  for (const auto& c : kClassCases) {
    const Vec3 got = discretize(c.d, DiscretizationConfig{c.l, c.l_max});
    if (got == c.expected) {
      ++ok;
    } else if (first_bad.empty()) {
      first_bad = line(" first mismatch d=(%d,%d,%d) got (%d,%d,%d)", c.d.x, c.d.y, c.d.z, got.x, got.y, got.z);
    }
  }
  return {ok == kClassCases.size() && kClassCases.size() >= 20,
          line("%zu/%zu exact", ok, kClassCases.size()) + first_bad};
}

Outcome position_bijection() {
  std::string detail;
  bool pass = true;
  for (int l_max : {1, 2, 4, 8}) {
    const Vocabulary v({{1, Rotation::R0}}, DiscretizationConfig{{1, 1, 1}, l_max});
    std::set<int> ids;
    bool inverse_ok = true;
    for (int x = 0; x <= l_max; ++x)
      for (int y = 0; y <= l_max; ++y)
        for (int z = 0; z <= l_max; ++z) {
          const int id = v.position_token_id({x, y, z});
          ids.insert(id);
          inverse_ok = inverse_ok && v.position_class(id) == Vec3{x, y, z};
        }
    const auto expect = static_cast<std::size_t>((l_max + 1) * (l_max + 1) * (l_max + 1));
    const bool range_ok = *ids.begin() == v.position_base() && *ids.rbegin() == v.size() - 1;
    pass = pass && ids.size() == expect && inverse_ok && range_ok;
    detail += line("l_max=%d:%zu ", l_max, ids.size());
  }
  return {pass, detail};
}

Outcome round_trip() {
  std::size_t passed = 0, scanned = 0;
  std::uint64_t seed = 0;
  while (passed < 200 && scanned < 5000) {
    ++seed;
    ++scanned;
    const auto kind = static_cast<ModelKind>(seed % 4);
    const int n = 4 + static_cast<int>(seed % 21);
    const BrickModel m = synth_model(kind, n, seed);
    const Vocabulary v = Vocabulary::from_models(std::span<const BrickModel>(&m, 1), {});
    const auto order = order_sequence(m, 0, OrderStrategy::deterministic);
    bool in_range = true;
    for (auto d : relative_offsets(order, m)) in_range = in_range && offset_in_range(d, v.discretization());
    if (!in_range) continue;
    const Vec3 anchor = m.placements[static_cast<std::size_t>(order[0])].pos;
    const auto bricks = decode(encode(m, order, v).ids, anchor, v);
    bool same = bricks.size() == m.size();
    for (std::size_t i = 0; same && i < order.size(); ++i) {
      const Placement& p = m.placements[static_cast<std::size_t>(order[i])];
      same = bricks[i] == DecodedBrick{p.part_id, p.rot, p.pos};
    }
    if (!same) return {false, line("model %s failed to round-trip", m.name.c_str())};
    ++passed;
  }
  return {passed == 200, line("%zu/200 models reproduced (%zu generated, rest had out-of-range offsets)", passed, scanned)};
}

Outcome oracle_sound_complete() {
  std::size_t checked = 0, unbuildable = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    BrickModel m = synth_model(static_cast<ModelKind>(seed % 4), 2 + static_cast<int>(seed % 5), seed);
    // Lift one brick on every fifth model so some inputs have no valid order.
    if (seed % 5 == 0) m.placements.back().pos.z += 2;
    const auto all = enumerate_valid_orderings(m, 1'000'000);
    if (all.truncated) return {false, "enumeration truncated"};
    for (auto strategy : {OrderStrategy::deterministic, OrderStrategy::randomized, OrderStrategy::adversarial}) {
      bool threw = false;
      AssemblySequence order;
      try {
        order = order_sequence(m, seed, strategy);
      } catch (const NoValidOrdering&) {
        threw = true;
      }
      if (threw != all.orderings.empty())
        return {false, line("model %llu: oracle %s but enumeration has %zu orders", static_cast<unsigned long long>(seed),
                           threw ? "failed" : "succeeded", all.orderings.size())};
      if (!threw && !all.orderings.contains(order))
        return {false, line("model %llu: order not among valid permutations", static_cast<unsigned long long>(seed))};
    }
    if (all.orderings.empty()) ++unbuildable;
    ++checked;
  }
  return {checked == 100, line("%zu models x 3 strategies, %zu without any valid order", checked, unbuildable)};
}

Outcome gradient_check() {
  DatasetOptions opts;
  opts.models = 8;
  opts.n_min = 8;
  opts.n_max = 20;
  const auto man = make_manifest(opts);
  const auto models = realize_models(man);
  const Vocabulary vocab = Vocabulary::from_models(models, {});
  const auto corpus = build_corpus(man, models, vocab);
  std::mt19937_64 rng(3);
  MaskedBatch batch;
  for (std::size_t i = 0; i < 4; ++i) {
    auto ex = mask_stream(corpus[i * 4].tokens, vocab, 0.15, rng);
    batch.inputs.push_back(ex.input);
    batch.positions.push_back(ex.positions);
    batch.targets.push_back(ex.targets);
  }
  const auto params = LMParams::random(LMConfig::tiny(vocab.size()), 7);
  const auto samples = testutil::gradient_check(params, batch, 25, 1e-4, 11);
  double worst = 0.0;
  std::string detail;
  std::size_t total = 0;
  for (const auto& [cls, list] : samples) {
    double w = 0.0;
    for (const auto& s : list) w = std::max(w, s.rel_error);
    worst = std::max(worst, w);
    total += list.size();
    detail += line("%s %.1e ", std::string(to_string(cls)).c_str(), w);
  }
  return {worst < 1e-3 && samples.size() == 5 && total == 125, "max rel err per class: " + detail};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(2024);
  std::size_t agree = 0, zero_cases = 0;
  std::string first_bad;
  for (int t = 0; t < 20; ++t) {
    std::uniform_int_distribution<int> len(4, 14), sym(1, 3 + t % 4);
    std::vector<int> c(static_cast<std::size_t>(len(rng))), r(static_cast<std::size_t>(len(rng)));
    for (auto& x : r) x = sym(rng);
    if (t % 2 == 0) {
      for (auto& x : c) x = sym(rng);
    } else {
      // Edited copy of the reference so longer n-grams overlap.
      c = r;
      for (int e = 0; e < 1 + t % 3; ++e) c[std::uniform_int_distribution<std::size_t>(0, c.size() - 1)(rng)] = sym(rng);
      if (t % 3 == 0) c.resize(c.size() - 1);
    }
    const double b = bleu4(c, r);
    const double r1 = rouge_n(c, r, 1), r2 = rouge_n(c, r, 2);
    const double lcs_recall = 100.0 * (static_cast<double>(oracle::lcs(c, r)) / static_cast<double>(r.size()));
    const bool no_four_gram = oracle::matches(c, r, 4) == 0;
    if (no_four_gram) ++zero_cases;
    const bool ok = b == oracle::bleu4_log_mean(c, r) && r1 == oracle::rouge_n_recall(c, r, 1) &&
                    r2 == oracle::rouge_n_recall(c, r, 2) && rouge_l(c, r) == lcs_recall &&
                    lcs_length(c, r) == oracle::lcs(c, r) && (b == 0.0) == no_four_gram;
    if (ok) ++agree;
    else if (first_bad.empty()) first_bad = line(" first disagreement on pair %d", t);
  }
  // A pair with shared unigrams but no shared 4-gram scores exactly zero.
  const std::vector<int> cand{1, 2, 3, 9, 1, 2, 3}, ref{1, 2, 3, 4, 1, 2, 3};
  const bool zero_row = oracle::matches(cand, ref, 4) == 0 && bleu4(cand, ref) == 0.0 && rouge_n(cand, ref, 1) > 0.0;
  return {agree == 20 && zero_row,
          line("%zu/20 random pairs agree exactly (%zu without a shared 4-gram), zero BLEU-4 row %s", agree, zero_cases,
               zero_row ? "representable" : "NOT representable") +
              first_bad};
}

// ---------------------------------------------------------------------------

std::vector<std::vector<int>> memorizable_set(Vocabulary& vocab) {
  std::vector<BrickModel> models;
  for (std::uint64_t s = 1; s <= 8; ++s) models.push_back(synth_model(static_cast<ModelKind>(s % 4), 6, 100 + s));
  vocab = Vocabulary::from_models(models, {});
  std::vector<std::vector<int>> seqs;
  for (const auto& m : models) seqs.push_back(encode(m, order_sequence(m, 0, OrderStrategy::deterministic), vocab).ids);
  return seqs;
}

double overfit_perplexity(double lr, std::size_t steps) {
  Vocabulary vocab;
  const auto seqs = memorizable_set(vocab);
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.steps = steps;
  tc.seed = 5;
  const auto result = train(LMParams::random(LMConfig::desk(vocab.size()), 1), seqs, vocab, tc);
  // Several independent masking draws over the same eight sequences.
  std::vector<std::vector<int>> eval;
  for (int rep = 0; rep < 16; ++rep) eval.insert(eval.end(), seqs.begin(), seqs.end());
  return perplexity(result.params, eval, vocab, 99);
}

std::map<double, double> overfit_results;

Outcome overfit() {
  const double ppl = overfit_results[1e-3] = overfit_perplexity(1e-3, 2000);
  return {ppl < 1.1, line("desk, 8 sequences, lr 1e-3, 2000 steps: perplexity %.4f (target < 1.1)", ppl)};
}

Outcome learning_rate_direction() {
  auto& ppl = overfit_results;
  for (double lr : {1e-2, 1e-3, 1e-4})
    if (!ppl.contains(lr)) ppl[lr] = overfit_perplexity(lr, 2000);
  const bool pass = ppl[1e-3] <= ppl[1e-2] && ppl[1e-3] <= ppl[1e-4];
  return {pass, line("perplexity lr=1e-2: %.4f, lr=1e-3: %.4f, lr=1e-4: %.4f", ppl[1e-2], ppl[1e-3], ppl[1e-4])};
}

// ---------------------------------------------------------------------------

struct Trained {
  std::filesystem::path dir;
  std::optional<LoadedDataset> data;
  std::optional<LMParams> params;
  std::shared_ptr<const Vocabulary> vocab;
  std::filesystem::path checkpoint;
};

Trained& trained() {
  static Trained t;
  return t;
}

void train_desk_model() {
  auto& t = trained();
  t.dir = std::filesystem::temp_directory_path() / line("brickseq_acceptance_%llu", static_cast<unsigned long long>(
                                                                                         Clock::now().time_since_epoch().count()));
  std::filesystem::create_directories(t.dir);
  DatasetOptions opts;
  opts.models = 128;
  opts.seed = 1;
  write_dataset(t.dir / "data", opts);
  t.data = load_dataset(t.dir / "data");
  t.vocab = std::make_shared<const Vocabulary>(t.data->vocab);
  TrainConfig tc;
  tc.steps = 2000;
  tc.seed = mix_seed(1, 2);
  auto result = train(LMParams::random(LMConfig::desk(t.vocab->size()), mix_seed(1, 1)), t.data->train, *t.vocab, tc);
  t.params = std::move(result.params);
  t.checkpoint = t.dir / "desk.bin";
  save_checkpoint(t.checkpoint, *t.params, t.vocab.get());
  // Evaluate what was saved, not the double-precision weights.
  t.params = load_checkpoint(t.checkpoint).params;
}

std::vector<std::size_t> held_out() {
  const auto& man = trained().data->manifest;
  std::vector<std::size_t> ids(man.test.begin(), man.test.end());
  ids.insert(ids.end(), man.val.begin(), man.val.end());
  return ids;
}

Outcome conditional_metrics() {
  auto& t = trained();
  std::vector<EvalCase> cases;
  for (std::size_t idx : t.data->manifest.test) {
    auto m = std::make_shared<const BrickModel>(t.data->models[idx]);
    cases.push_back({m, order_sequence(*m, 0, OrderStrategy::deterministic)});
  }
  EvalConfig cfg;
  cfg.prefix_lengths = {20};
  cfg.horizon = 80;
  const auto report = evaluate_conditional(*t.params, t.vocab, cases, cfg);
  const auto& model = report.model_rows[0];
  const auto& base = report.baseline_rows[0];
  const bool pass = model.cases > 0 && model.rouge1 >= base.rouge1 + 5.0 && model.bleu4 > 0.0;
  return {pass, line("prefix 20, %zu test models: ROUGE-1 %.2f vs random-valid %.2f (margin %.2f, need >= 5), "
                    "BLEU-4 %.2f vs %.2f",
                    model.cases, model.rouge1, base.rouge1, model.rouge1 - base.rouge1, model.bleu4, base.bleu4)};
}

Outcome generation_validity() {
  auto& t = trained();
  const auto ids = held_out();
  std::size_t runs = 0, steps = 0, bad = 0;
  for (std::size_t r = 0; r < 50; ++r) {
    const auto& src = t.data->models[ids[r % ids.size()]];
    auto m = std::make_shared<const BrickModel>(src);
    const auto ref = order_sequence(*m, r, OrderStrategy::randomized);
    const std::size_t prefix = r % std::min<std::size_t>(m->size(), 12);
    const auto mode = r % 2 == 0 ? DecodeMode::greedy : DecodeMode::sampled;
    const auto gen = generate_conditional(*t.params, m, t.vocab, ref, prefix, 80, mode, r);
    for (std::size_t len = prefix + 1; len <= gen.sequence.size(); ++len) {
      ++steps;
      if (!validate_prefix(std::span<const int>(gen.sequence).first(len), *m).ok) ++bad;
    }
    if (gen.truncated) ++bad;
    ++runs;
  }
  return {bad == 0 && runs == 50, line("%zu runs (greedy and sampled), %zu emitted steps, %zu invalid", runs, steps, bad)};
}

Outcome throughput() {
  auto& t = trained();
  auto m = std::make_shared<const BrickModel>(synth_model(ModelKind::random_stack, 100, 7));
  OracleStats stats;
  auto t0 = Clock::now();
  const auto oracle_order = order_sequence(*m, 0, OrderStrategy::adversarial, {}, &stats);
  const double oracle_s = seconds_since(t0);
  t0 = Clock::now();
  const auto gen = generate_conditional(*t.params, m, t.vocab, oracle_order, 0, m->size(), DecodeMode::greedy, 1);
  const double model_s = seconds_since(t0);
  const bool complete = gen.sequence.size() == 100 && validate_sequence(gen.sequence, *m).ok;
  const bool pass = complete && model_s < 120.0 && model_s < oracle_s;
  return {pass, line("100 bricks: model %.2f s (limit 120 s, %s), adversarial backtracking oracle %.4f s "
                    "(%llu expansions, %llu backtracks)",
                    model_s, complete ? "valid" : "INVALID", oracle_s,
                    static_cast<unsigned long long>(stats.expansions), static_cast<unsigned long long>(stats.backtracks))};
}

Outcome service_contract() {
  auto& t = trained();
  const BrickModel model = synth_model(ModelKind::pyramid, 22, 5);
  ServiceOptions opts;
  opts.checkpoint = t.checkpoint;
  GuidanceService svc(opts);
  const int port = svc.start_background();
  httplib::Client http("127.0.0.1", port);
  auto post = [&](const std::string& path, const json& body) {
    auto r = http.Post(path.c_str(), body.dump(), "application/json");
    if (!r) throw std::runtime_error("no response for " + path);
    return std::make_pair(r->status, json::parse(r->body));
  };
  auto get = [&](const std::string& path) {
    auto r = http.Get(path.c_str());
    if (!r) throw std::runtime_error("no response for " + path);
    return std::make_pair(r->status, json::parse(r->body));
  };

  const std::string mid = post("/models", to_json(model)).second.at("model_id");
  const std::string sid = post("/sessions", {{"model_id", mid}, {"mode", "multi_track"}, {"k", 3}}).second.at("session_id");
  const std::string base = "/sessions/" + sid;

  std::size_t invalid = 0, undos = 0, requests = 0;
  auto check_state = [&](std::size_t expect_step) {
    const auto [status, st] = get(base + "/state");
    ++requests;
    const auto prefix = st.at("prefix").get<std::vector<int>>();
    CellSet cells;
    for (int idx : prefix) add_cells(cells, model.placements[static_cast<std::size_t>(idx)], model.catalog);
    if (status != 200 || prefix.size() != expect_step || !validate_prefix(prefix, model).ok ||
        st.at("occupied").size() != cells.size())
      ++invalid;
  };

  std::size_t step = 0;
  json replay;
  while (step < model.size()) {
    const auto [cs, cand] = get(base + "/candidates");
    ++requests;
    if (cs != 200 || cand.at("candidates").empty()) return {false, line("no candidates at step %zu", step)};
    const int rank = step % 4 == 1 && cand.at("candidates").size() > 1 ? 2 : 1;
    const json body{{"step", step}, {"rank", rank}};
    const auto [ss, res] = post(base + "/step", body);
    ++requests;
    if (ss != 200) return {false, line("step %zu rejected with %d", step, ss)};
    if (step == 5) replay = body;
    ++step;
    check_state(step);
    if (step % 7 == 3) {
      const auto [us, ur] = post(base + "/undo", {{"step", step}});
      ++requests;
      if (us != 200) return {false, "undo rejected"};
      --step;
      ++undos;
      check_state(step);
      const auto [rs, rr] = post(base + "/step", {{"step", step}, {"rank", 1}});
      ++requests;
      if (rs != 200) return {false, "redo rejected"};
      ++step;
      check_state(step);
    }
  }
  const auto [fs, final_state] = get(base + "/state");
  const bool completed = final_state.at("completed").get<bool>() &&
                         validate_sequence(final_state.at("prefix").get<std::vector<int>>(), model).ok;
  const int stale = post(base + "/step", replay).first;
  const auto [after_status, after] = get(base + "/state");
  const bool unchanged = after.at("state_hash") == final_state.at("state_hash");
  svc.stop();
  const bool pass = completed && invalid == 0 && stale == 409 && unchanged && model.size() == 22;
  return {pass, line("%zu steps, %zu undos, %zu requests, %zu invalid states, stale replay -> %d", model.size(), undos,
                    requests, invalid, stale)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);

  criterion("relative-position classes", 1.0, class_reference_suite);
  criterion("position token bijection", 1.0, position_bijection);
  criterion("encode/decode round trip", 10.0, round_trip);
  criterion("oracle soundness/completeness", 30.0, oracle_sound_complete);
  criterion("gradient check", 60.0, gradient_check);
  criterion("metric oracles", 0.0, metric_oracles);
  criterion("overfit perplexity", 300.0, overfit);
  criterion("learning-rate direction", 0.0, learning_rate_direction);

  std::string setup_error;
  const auto t0 = Clock::now();
  try {
    train_desk_model();
    std::printf("----  setup: desk model trained on 128 synthetic models, 2000 steps (%.0f s)\n", seconds_since(t0));
  } catch (const std::exception& e) {
    setup_error = e.what();
    std::printf("----  setup: desk model training failed: %s\n", e.what());
  }
  std::fflush(stdout);
  auto needs_model = [&](std::function<Outcome()> body) {
    return [&setup_error, body] {
      return setup_error.empty() ? body() : Outcome{false, "no trained model: " + setup_error};
    };
  };
  criterion("conditional-generation metrics", 0.0, needs_model(conditional_metrics));
  criterion("generation validity", 0.0, needs_model(generation_validity));
  criterion("throughput", 0.0, needs_model(throughput));
  criterion("service contract", 0.0, needs_model(service_contract));
  if (!trained().dir.empty()) std::filesystem::remove_all(trained().dir);

  std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ALL PASS" : "FAILED", failures);
  return failures == 0 ? 0 : 1;
}
