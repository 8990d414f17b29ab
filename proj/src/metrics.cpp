#include "brickseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>

#include "brickseq/errors.hpp"
#include "brickseq/train.hpp"
#include "brickseq/validity.hpp"

namespace brickseq {

double perplexity(const LMParams& params, std::span<const std::vector<int>> corpus,
                  const Vocabulary& vocab, std::uint64_t mask_seed, const EncoderOptions& opts) {
  if (corpus.empty()) throw EmptyCorpus("perplexity of an empty corpus");
  std::mt19937_64 rng(mask_seed);
  constexpr std::size_t kBatch = 32;
  double nll = 0.0;
  std::size_t masked = 0;
  for (std::size_t start = 0; start < corpus.size(); start += kBatch) {
    MaskedBatch batch;
    for (std::size_t s = start; s < std::min(corpus.size(), start + kBatch); ++s) {
      auto ex = mask_stream(corpus[s], vocab, params.config().mask_fraction, rng);
      batch.inputs.push_back(std::move(ex.input));
      batch.positions.push_back(std::move(ex.positions));
      batch.targets.push_back(std::move(ex.targets));
    }
    const std::size_t m = batch.masked_count();
    nll += masked_loss(params, batch, opts) * static_cast<double>(m);
    masked += m;
  }
  return std::exp(nll / static_cast<double>(masked));
}

namespace {

using Gram = std::vector<int>;

std::map<Gram, std::size_t> ngram_counts(std::span<const int> seq, std::size_t n) {
  std::map<Gram, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[Gram(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

std::size_t clipped_matches(const std::map<Gram, std::size_t>& cand, const std::map<Gram, std::size_t>& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

double combine(double precision, double recall, RougeForm form) {
  if (form == RougeForm::recall) return recall;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double bleu4(std::span<const int> candidate, std::span<const int> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (candidate.size() < n) return 0.0;
    const std::size_t total = candidate.size() - n + 1;
    const std::size_t m = clipped_matches(ngram_counts(candidate, n), ngram_counts(reference, n));
    if (m == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / static_cast<double>(total));
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double rouge_n(std::span<const int> candidate, std::span<const int> reference, int n, RougeForm form) {
  if (n < 1) throw std::invalid_argument("rouge n must be >= 1");
  const auto un = static_cast<std::size_t>(n);
  if (reference.size() < un) throw Undefined("reference shorter than n");
  const std::size_t ref_total = reference.size() - un + 1;
  const std::size_t m = clipped_matches(ngram_counts(candidate, un), ngram_counts(reference, un));
  const double recall = static_cast<double>(m) / static_cast<double>(ref_total);
  const double precision =
      candidate.size() >= un ? static_cast<double>(m) / static_cast<double>(candidate.size() - un + 1) : 0.0;
  return 100.0 * combine(precision, recall, form);
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const int> candidate, std::span<const int> reference, RougeForm form) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(candidate, reference));
  return 100.0 * combine(l / static_cast<double>(candidate.size()), l / static_cast<double>(reference.size()), form);
}

std::vector<int> continuation_tokens(const BrickModel& model, std::span<const int> seq,
                                     std::size_t prefix_len, const Vocabulary& vocab, bool brick_only) {
  const auto stream = encode(model, seq, vocab, false);
  // BOS, then 2*prefix_len - 1 prefix tokens.
  const std::size_t start = prefix_len == 0 ? 1 : 2 * prefix_len;
  std::vector<int> out;
  for (std::size_t i = start; i < stream.ids.size(); ++i) {
    if (brick_only && stream.kinds[i] != TokenKind::brick) continue;
    out.push_back(stream.ids[i]);
  }
  return out;
}

EvalRow score_continuations(std::span<const std::vector<int>> candidates,
                            std::span<const std::vector<int>> references, std::size_t prefix,
                            RougeForm form) {
  EvalRow row;
  row.prefix = prefix;
  std::size_t n1 = 0, n2 = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    if (r.empty()) continue;
    ++row.cases;
    row.bleu4 += bleu4(c, r);
    row.rougeL += rouge_l(c, r, form);
    row.rouge1 += rouge_n(c, r, 1, form);
    ++n1;
    if (r.size() >= 2) {
      row.rouge2 += rouge_n(c, r, 2, form);
      ++n2;
    }
  }
  if (row.cases > 0) {
    row.bleu4 /= static_cast<double>(row.cases);
    row.rougeL /= static_cast<double>(row.cases);
  }
  if (n1 > 0) row.rouge1 /= static_cast<double>(n1);
  if (n2 > 0) row.rouge2 /= static_cast<double>(n2);
  return row;
}

EvalReport evaluate_conditional(const LMParams& params, std::shared_ptr<const Vocabulary> vocab,
                                std::span<const EvalCase> cases, const EvalConfig& cfg) {
  EvalReport report;
  for (std::size_t prefix : cfg.prefix_lengths) {
    std::vector<std::vector<int>> refs, gens, base_refs, base_gens;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
      const auto& ec = cases[ci];
      if (ec.reference.size() <= prefix) continue;
      const std::size_t end = std::min(ec.reference.size(), prefix + cfg.horizon);
      const std::span<const int> ref_seq(ec.reference.data(), end);
      auto ref = continuation_tokens(*ec.model, ref_seq, prefix, *vocab, cfg.brick_only);

      const auto gen = generate_conditional(params, ec.model, vocab, ec.reference, prefix, cfg.horizon,
                                            cfg.decode, cfg.seed + ci, cfg.generation);
      if (!validate_prefix(gen.sequence, *ec.model).ok) ++report.invalid_steps;
      gens.push_back(continuation_tokens(*ec.model, gen.sequence, prefix, *vocab, cfg.brick_only));
      refs.push_back(ref);

      for (std::size_t run = 0; run < cfg.baseline_runs; ++run) {
        const auto base = generate_random_valid(ec.model, ec.reference, prefix, cfg.horizon,
                                                cfg.seed * 7919 + ci * 101 + run);
        base_gens.push_back(continuation_tokens(*ec.model, base.sequence, prefix, *vocab, cfg.brick_only));
        base_refs.push_back(ref);
      }
    }
    report.model_rows.push_back(score_continuations(gens, refs, prefix, cfg.rouge_form));
    EvalRow base = score_continuations(base_gens, base_refs, prefix, cfg.rouge_form);
    base.cases = refs.size();
    report.baseline_rows.push_back(base);
  }
  return report;
}

namespace {

nlohmann::json row_json(const EvalRow& r) {
  return {{"prefix", r.prefix}, {"cases", r.cases},   {"BLEU-4", r.bleu4},
          {"ROUGE-1", r.rouge1}, {"ROUGE-2", r.rouge2}, {"ROUGE-L", r.rougeL}};
}

}  // namespace

nlohmann::json to_json(const EvalReport& report, const EvalConfig& cfg) {
  nlohmann::json rows = nlohmann::json::array(), base = nlohmann::json::array();
  for (const auto& r : report.model_rows) rows.push_back(row_json(r));
  for (const auto& r : report.baseline_rows) base.push_back(row_json(r));
  return {{"columns", {"BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L"}},
          {"rows", rows},
          {"baseline_random_valid", base},
          {"horizon", cfg.horizon},
          {"decode", cfg.decode == DecodeMode::greedy ? "greedy" : "sampled"},
          {"tokens", cfg.brick_only ? "brick_only" : "interleaved"},
          {"rouge", cfg.rouge_form == RougeForm::recall ? "recall" : "f1"},
          {"invalid_steps", report.invalid_steps}};
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "system,prefix,cases,BLEU-4,ROUGE-1,ROUGE-2,ROUGE-L\n";
  auto emit = [&](const char* sys, const EvalRow& r) {
    out << sys << ',' << r.prefix << ',' << r.cases << ',' << r.bleu4 << ',' << r.rouge1 << ',' << r.rouge2
        << ',' << r.rougeL << '\n';
  };
  for (const auto& r : report.model_rows) emit("model", r);
  for (const auto& r : report.baseline_rows) emit("random_valid", r);
  return out.str();
}

}  // namespace brickseq
