#include "brickseq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "brickseq/errors.hpp"

namespace brickseq {

namespace {

std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

double draw_unit(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

int same_kind_token(int id, const Vocabulary& vocab, std::mt19937_64& rng) {
  if (vocab.kind(id) == TokenKind::brick && vocab.brick_count() > 0)
    return vocab.brick_base() + static_cast<int>(draw_index(rng, static_cast<std::size_t>(vocab.brick_count())));
  if (vocab.kind(id) == TokenKind::position)
    return vocab.position_base() + static_cast<int>(draw_index(rng, static_cast<std::size_t>(vocab.position_count())));
  return id;
}

// Masks `count` of the candidate positions in place using the 80/10/10 rule.
void corrupt(MaskedExample& ex, std::vector<int> candidates, std::size_t count,
             const Vocabulary& vocab, std::mt19937_64& rng) {
  count = std::min(count, candidates.size());
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(candidates[i], candidates[i + draw_index(rng, candidates.size() - i)]);
  }
  std::vector<int> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());
  for (int pos : chosen) {
    const int original = ex.input[static_cast<std::size_t>(pos)];
    const double r = draw_unit(rng);
    if (r < 0.8) ex.input[static_cast<std::size_t>(pos)] = special::MASK;
    else if (r < 0.9) ex.input[static_cast<std::size_t>(pos)] = same_kind_token(original, vocab, rng);
    ex.positions.push_back(pos);
    ex.targets.push_back(original);
  }
}

std::vector<int> content_positions(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id == special::UNK || (id >= vocab.brick_base() && id < vocab.size()))
      out.push_back(static_cast<int>(i));
  }
  return out;
}

std::size_t mask_count(std::size_t content, double fraction) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(content))));
}

}  // namespace

MaskedExample mask_stream(std::span<const int> ids, const Vocabulary& vocab, double fraction,
                          std::mt19937_64& rng) {
  MaskedExample ex;
  ex.input.assign(ids.begin(), ids.end());
  auto content = content_positions(ids, vocab);
  if (content.empty()) throw EmptyMask("stream has no content tokens");
  const std::size_t count = mask_count(content.size(), fraction);
  corrupt(ex, std::move(content), count, vocab, rng);
  return ex;
}

MaskedExample mask_open_prefix(std::span<const int> ids, std::size_t content_len,
                               const Vocabulary& vocab, double fraction, std::mt19937_64& rng) {
  if (ids.empty() || ids.front() != special::BOS) throw MalformedStream("stream must start with BOS");
  const auto content = content_positions(ids, vocab);
  if (content_len < 1 || content_len > content.size())
    throw std::invalid_argument("open prefix length out of range");
  MaskedExample ex;
  ex.input.assign(ids.begin(), ids.begin() + 1 + static_cast<std::ptrdiff_t>(content_len));
  const int last = static_cast<int>(content_len);
  std::vector<int> others;
  for (int p = 1; p < last; ++p) others.push_back(p);
  if (!others.empty()) corrupt(ex, others, mask_count(content_len, fraction) - 1, vocab, rng);
  ex.positions.push_back(last);
  ex.targets.push_back(ex.input[static_cast<std::size_t>(last)]);
  ex.input[static_cast<std::size_t>(last)] = special::MASK;
  return ex;
}

AdamOptimizer::AdamOptimizer(std::size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

double AdamOptimizer::step(std::span<double> params, std::span<double> grads, double learning_rate,
                           double clip_norm) {
  double sq = 0.0;
  for (double g : grads) sq += g * g;
  const double norm = std::sqrt(sq);
  const double clip = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= learning_rate * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
  return norm;
}

TrainResult train(LMParams params, std::span<const std::vector<int>> dataset,
                  const Vocabulary& vocab, const TrainConfig& tc, const EncoderOptions& opts,
                  const StepCallback& on_step) {
  if (dataset.empty()) throw EmptyCorpus("training set is empty");
  if (tc.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(tc.learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (params.config().vocab_size != vocab.size())
    throw ConfigMismatch("model vocab_size " + std::to_string(params.config().vocab_size) +
                         " != vocabulary size " + std::to_string(vocab.size()));

  std::mt19937_64 rng(tc.seed);
  AdamOptimizer adam(params.values().size(), tc.beta1, tc.beta2, tc.adam_eps);
  TrainResult result;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  std::size_t step = 0;
  while (step < tc.steps) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw_index(rng, i)]);
    double epoch_nll = 0.0;
    std::size_t epoch_masked = 0;
    for (std::size_t start = 0; start < order.size() && step < tc.steps; start += tc.batch_size) {
      MaskedBatch batch;
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ids = dataset[order[b]];
        MaskedExample ex;
        if (draw_unit(rng) < tc.prefix_fraction) {
          const std::size_t content = content_positions(ids, vocab).size();
          ex = mask_open_prefix(ids, 1 + draw_index(rng, content), vocab, tc.mask_fraction, rng);
        } else {
          ex = mask_stream(ids, vocab, tc.mask_fraction, rng);
        }
        batch.inputs.push_back(std::move(ex.input));
        batch.positions.push_back(std::move(ex.positions));
        batch.targets.push_back(std::move(ex.targets));
      }
      auto lg = loss_and_grads(params, batch, opts);
      if (!std::isfinite(lg.loss))
        throw TrainingDiverged(step, "loss became non-finite at step " + std::to_string(step));
      adam.step(params.values(), lg.grads, tc.learning_rate, tc.clip_norm);
      if (!params.all_finite())
        throw TrainingDiverged(step, "parameters became non-finite at step " + std::to_string(step));
      result.step_loss.push_back(lg.loss);
      epoch_nll += lg.loss * static_cast<double>(lg.masked);
      epoch_masked += lg.masked;
      if (on_step) on_step(step, lg.loss);
      ++step;
    }
    result.epoch_perplexity.push_back(std::exp(epoch_nll / static_cast<double>(epoch_masked)));
  }
  result.params = std::move(params);
  return result;
}

}  // namespace brickseq
