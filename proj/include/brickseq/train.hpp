#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "brickseq/tokenize.hpp"
#include "brickseq/transformer.hpp"

namespace brickseq {

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  // Share of training examples cut to a random open prefix whose final slot
  // is masked; this is the shape the model sees when extending a sequence.
  double prefix_fraction = 0.5;
  double mask_fraction = 0.15;
};

struct MaskedExample {
  std::vector<int> input;
  std::vector<int> positions;
  std::vector<int> targets;
};

// Masks round(fraction * content) content tokens (at least one): 80% become
// MASK, 10% a random token of the same kind, 10% stay unchanged.
MaskedExample mask_stream(std::span<const int> ids, const Vocabulary& vocab, double fraction,
                          std::mt19937_64& rng);

// Keeps BOS plus the first `content_len` content tokens, drops EOS, and
// replaces the last kept token with MASK (always a target). Other kept
// content tokens are masked as in mask_stream.
MaskedExample mask_open_prefix(std::span<const int> ids, std::size_t content_len,
                               const Vocabulary& vocab, double fraction, std::mt19937_64& rng);

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t size, double beta1, double beta2, double eps);
  // Applies one update; returns the gradient norm before clipping.
  double step(std::span<double> params, std::span<double> grads, double learning_rate,
              double clip_norm);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

struct TrainResult {
  LMParams params;
  std::vector<double> epoch_perplexity;
  std::vector<double> step_loss;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Throws TrainingDiverged on a non-finite loss.
TrainResult train(LMParams params, std::span<const std::vector<int>> dataset,
                  const Vocabulary& vocab, const TrainConfig& tc, const EncoderOptions& opts = {},
                  const StepCallback& on_step = {});

}  // namespace brickseq
