#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "brickseq/generate.hpp"
#include "brickseq/tokenize.hpp"
#include "brickseq/transformer.hpp"
#include "json.hpp"

namespace brickseq {

// exp(mean masked cross-entropy) under a fixed masking pattern. Throws EmptyCorpus.
double perplexity(const LMParams& params, std::span<const std::vector<int>> corpus,
                  const Vocabulary& vocab, std::uint64_t mask_seed, const EncoderOptions& opts = {});

// Percentages in [0, 100].
double bleu4(std::span<const int> candidate, std::span<const int> reference);

enum class RougeForm { recall, f1 };

// Throws Undefined when the reference has fewer than n tokens.
double rouge_n(std::span<const int> candidate, std::span<const int> reference, int n,
               RougeForm form = RougeForm::recall);
double rouge_l(std::span<const int> candidate, std::span<const int> reference,
               RougeForm form = RougeForm::recall);

std::size_t lcs_length(std::span<const int> a, std::span<const int> b);

struct EvalCase {
  std::shared_ptr<const BrickModel> model;
  AssemblySequence reference;
};

struct EvalConfig {
  std::vector<std::size_t> prefix_lengths{10, 20, 30, 40};
  std::size_t horizon = 80;
  DecodeMode decode = DecodeMode::greedy;
  std::uint64_t seed = 1;
  bool brick_only = false;
  RougeForm rouge_form = RougeForm::recall;
  std::size_t baseline_runs = 5;
  GenerationConfig generation{};
};

struct EvalRow {
  std::size_t prefix = 0;
  std::size_t cases = 0;  // models long enough for this prefix
  double bleu4 = 0.0, rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> model_rows;
  std::vector<EvalRow> baseline_rows;  // uniform random valid placement
  std::size_t invalid_steps = 0;       // generated sequences failing validate_prefix (expected 0)
};

// Continuation tokens after `prefix_len` bricks: pr_prefix, t_prefix+1, ...
std::vector<int> continuation_tokens(const BrickModel& model, std::span<const int> seq,
                                     std::size_t prefix_len, const Vocabulary& vocab, bool brick_only);

EvalRow score_continuations(std::span<const std::vector<int>> candidates,
                            std::span<const std::vector<int>> references, std::size_t prefix,
                            RougeForm form);

EvalReport evaluate_conditional(const LMParams& params, std::shared_ptr<const Vocabulary> vocab,
                                std::span<const EvalCase> cases, const EvalConfig& cfg);

nlohmann::json to_json(const EvalReport& report, const EvalConfig& cfg);
std::string to_csv(const EvalReport& report);

}  // namespace brickseq
