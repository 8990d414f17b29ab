#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "brickseq/kernels.hpp"
#include "json.hpp"

namespace brickseq {

struct LMConfig {
  int layers = 2;
  int heads = 2;
  int model_dim = 64;
  int ffn_dim = 256;
  int max_seq_len = 256;
  int vocab_size = 0;
  double mask_fraction = 0.15;
  std::uint64_t seed = 1;
  bool tie_output = true;  // output head reuses the token embedding matrix

  int head_dim() const { return model_dim / heads; }
  void check() const;  // throws ConfigMismatch

  static LMConfig desk(int vocab_size);   // 2 layers, 2 heads, dim 64
  static LMConfig paper(int vocab_size);  // 6 layers, 12 heads, dim 768
  static LMConfig tiny(int vocab_size);   // 2 layers, 2 heads, dim 16
  static LMConfig profile(std::string_view name, int vocab_size);

  nlohmann::json to_json() const;
  static LMConfig from_json(const nlohmann::json& j);
  friend bool operator==(const LMConfig&, const LMConfig&) = default;
};

enum class TensorClass { embedding, attention, ffn, norm, output };
std::string_view to_string(TensorClass c);

struct TensorInfo {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  TensorClass cls = TensorClass::embedding;
  std::size_t size() const { return rows * cols; }
};

// Offsets of every tensor inside the flat parameter buffer.
struct LayerLayout {
  std::size_t ln1_gain, ln1_offset;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_offset;
  std::size_t w1, b1, w2, b2;
};

struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<LayerLayout> layers;
  std::size_t final_gain = 0, final_offset = 0;
  std::size_t out_w = 0;  // only meaningful when the head is untied
  std::size_t out_bias = 0;
  std::size_t total = 0;

  explicit ParamLayout(const LMConfig& cfg);
  ParamLayout() = default;
};

// All trainable weights in one flat buffer. Gradients and optimizer moments
// use buffers with the same layout.
class LMParams {
 public:
  LMParams() = default;
  // Zero weights, unit normalization gains.
  explicit LMParams(const LMConfig& cfg);
  // Gaussian(0, init_scale) matrices and embeddings, zero biases, unit gains.
  static LMParams random(const LMConfig& cfg, std::uint64_t seed, double init_scale = 0.02);

  const LMConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> tensor(const TensorInfo& t) { return values().subspan(t.offset, t.size()); }
  std::span<const double> tensor(const TensorInfo& t) const {
    return values().subspan(t.offset, t.size());
  }
  const TensorInfo& find(std::string_view name) const;  // throws std::out_of_range
  bool all_finite() const;

  friend bool operator==(const LMParams& a, const LMParams& b) {
    return a.cfg_ == b.cfg_ && a.values_ == b.values_;
  }

 private:
  LMConfig cfg_;
  ParamLayout layout_;
  std::vector<double> values_;
};

struct EncoderOptions {
  kernels::Backend backend = kernels::Backend::parallel;
};

// One row per requested position: a probability distribution over the vocabulary.
using Distribution = std::vector<double>;

// ids: sequences padded with PAD (ragged input is accepted too). PAD keys are
// never attended to. Throws ConfigMismatch / SequenceTooLong.
std::vector<std::vector<Distribution>> forward(const LMParams& params,
                                               std::span<const std::vector<int>> ids,
                                               std::span<const std::vector<int>> mask_positions,
                                               const EncoderOptions& opts = {});

// Raw logits at the requested positions of a single sequence.
std::vector<std::vector<double>> logits(const LMParams& params, std::span<const int> ids,
                                        std::span<const int> positions,
                                        const EncoderOptions& opts = {});

struct MaskedBatch {
  std::vector<std::vector<int>> inputs;     // corrupted ids
  std::vector<std::vector<int>> positions;  // masked positions per sequence
  std::vector<std::vector<int>> targets;    // true ids at those positions
  std::size_t masked_count() const;
};

struct LossAndGrads {
  double loss = 0.0;  // mean negative log-likelihood over all masked positions
  std::size_t masked = 0;
  std::vector<double> grads;  // same layout as LMParams::values()
};

// Throws EmptyMask if any sequence has no masked position.
LossAndGrads loss_and_grads(const LMParams& params, const MaskedBatch& batch,
                            const EncoderOptions& opts = {});

// Forward-only loss (same value as loss_and_grads().loss).
double masked_loss(const LMParams& params, const MaskedBatch& batch,
                   const EncoderOptions& opts = {});

}  // namespace brickseq
