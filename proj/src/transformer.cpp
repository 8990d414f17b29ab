#include "brickseq/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <omp.h>

#include "brickseq/errors.hpp"
#include "brickseq/tokenize.hpp"

namespace brickseq {

namespace k = kernels;
using k::Backend;

void LMConfig::check() const {
  if (layers < 1 || heads < 1 || model_dim < 1 || ffn_dim < 1 || max_seq_len < 2 || vocab_size < 1)
    throw ConfigMismatch("LMConfig dimensions must be positive");
  if (model_dim % heads != 0) throw ConfigMismatch("model_dim must be divisible by heads");
  if (!(mask_fraction > 0.0 && mask_fraction < 1.0))
    throw ConfigMismatch("mask_fraction must lie in (0, 1)");
}

LMConfig LMConfig::desk(int vocab_size) {
  LMConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 64;
  c.ffn_dim = 256;
  c.max_seq_len = 256;
  c.vocab_size = vocab_size;
  return c;
}

LMConfig LMConfig::paper(int vocab_size) {
  LMConfig c;
  c.layers = 6;
  c.heads = 12;
  c.model_dim = 768;
  c.ffn_dim = 3072;
  c.max_seq_len = 512;
  c.vocab_size = vocab_size;
  return c;
}

LMConfig LMConfig::tiny(int vocab_size) {
  LMConfig c;
  c.layers = 2;
  c.heads = 2;
  c.model_dim = 16;
  c.ffn_dim = 32;
  c.max_seq_len = 64;
  c.vocab_size = vocab_size;
  return c;
}

LMConfig LMConfig::profile(std::string_view name, int vocab_size) {
  if (name == "desk") return desk(vocab_size);
  if (name == "paper") return paper(vocab_size);
  if (name == "tiny") return tiny(vocab_size);
  throw std::invalid_argument("unknown profile '" + std::string(name) + "'");
}

nlohmann::json LMConfig::to_json() const {
  return {{"layers", layers},         {"heads", heads},
          {"model_dim", model_dim},   {"ffn_dim", ffn_dim},
          {"max_seq_len", max_seq_len}, {"vocab_size", vocab_size},
          {"mask_fraction", mask_fraction}, {"seed", seed},
          {"tie_output", tie_output}};
}

LMConfig LMConfig::from_json(const nlohmann::json& j) {
  LMConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.ffn_dim = j.at("ffn_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.mask_fraction = j.at("mask_fraction").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.tie_output = j.at("tie_output").get<bool>();
  c.check();
  return c;
}

std::string_view to_string(TensorClass c) {
  switch (c) {
    case TensorClass::embedding: return "embedding";
    case TensorClass::attention: return "attention";
    case TensorClass::ffn: return "ffn";
    case TensorClass::norm: return "norm";
    case TensorClass::output: return "output";
  }
  return "?";
}

ParamLayout::ParamLayout(const LMConfig& cfg) {
  cfg.check();
  const std::size_t D = static_cast<std::size_t>(cfg.model_dim);
  const std::size_t F = static_cast<std::size_t>(cfg.ffn_dim);
  const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
  const std::size_t L = static_cast<std::size_t>(cfg.max_seq_len);

  auto add = [&](std::string name, std::size_t rows, std::size_t cols, TensorClass cls) {
    tensors.push_back({std::move(name), total, rows, cols, cls});
    const std::size_t off = total;
    total += rows * cols;
    return off;
  };

  tok_emb = add("tok_emb", V, D, TensorClass::embedding);
  pos_emb = add("pos_emb", L, D, TensorClass::embedding);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerLayout ll{};
    ll.ln1_gain = add(p + "ln1.gain", 1, D, TensorClass::norm);
    ll.ln1_offset = add(p + "ln1.offset", 1, D, TensorClass::norm);
    ll.wq = add(p + "attn.wq", D, D, TensorClass::attention);
    ll.bq = add(p + "attn.bq", 1, D, TensorClass::attention);
    ll.wk = add(p + "attn.wk", D, D, TensorClass::attention);
    ll.bk = add(p + "attn.bk", 1, D, TensorClass::attention);
    ll.wv = add(p + "attn.wv", D, D, TensorClass::attention);
    ll.bv = add(p + "attn.bv", 1, D, TensorClass::attention);
    ll.wo = add(p + "attn.wo", D, D, TensorClass::attention);
    ll.bo = add(p + "attn.bo", 1, D, TensorClass::attention);
    ll.ln2_gain = add(p + "ln2.gain", 1, D, TensorClass::norm);
    ll.ln2_offset = add(p + "ln2.offset", 1, D, TensorClass::norm);
    ll.w1 = add(p + "ffn.w1", D, F, TensorClass::ffn);
    ll.b1 = add(p + "ffn.b1", 1, F, TensorClass::ffn);
    ll.w2 = add(p + "ffn.w2", F, D, TensorClass::ffn);
    ll.b2 = add(p + "ffn.b2", 1, D, TensorClass::ffn);
    layers.push_back(ll);
  }
  final_gain = add("final_ln.gain", 1, D, TensorClass::norm);
  final_offset = add("final_ln.offset", 1, D, TensorClass::norm);
  if (!cfg.tie_output) out_w = add("out.w", D, V, TensorClass::output);
  out_bias = add("out.bias", 1, V, TensorClass::output);
}

LMParams::LMParams(const LMConfig& cfg) : cfg_(cfg), layout_(cfg), values_(layout_.total, 0.0) {
  for (const auto& t : layout_.tensors) {
    if (t.cls == TensorClass::norm && t.name.ends_with(".gain"))
      std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 1.0);
  }
}

LMParams LMParams::random(const LMConfig& cfg, std::uint64_t seed, double init_scale) {
  LMParams p(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, init_scale);
  for (const auto& t : p.layout_.tensors) {
    // Biases, normalization parameters and the output bias keep their defaults.
    if (t.rows == 1) continue;
    for (double& v : p.tensor(t)) v = normal(rng);
  }
  return p;
}

const TensorInfo& LMParams::find(std::string_view name) const {
  for (const auto& t : layout_.tensors)
    if (t.name == name) return t;
  throw std::out_of_range("no tensor named " + std::string(name));
}

bool LMParams::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::size_t MaskedBatch::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : positions) n += p.size();
  return n;
}

namespace {

struct LayerCache {
  std::vector<double> x_in, a, ln1_xhat, ln1_rstd, q, kk, v, probs, ctx, x_mid, b, ln2_xhat,
      ln2_rstd, u, g;
};

// Activations of one sequence, kept for the backward pass.
struct Workspace {
  std::size_t T = 0;
  std::vector<char> key_valid;
  std::vector<LayerCache> layers;
  std::vector<double> x_out, y, lnf_xhat, lnf_rstd;
};

struct Dims {
  std::size_t D, F, H, dh, V;
  explicit Dims(const LMConfig& c)
      : D(static_cast<std::size_t>(c.model_dim)),
        F(static_cast<std::size_t>(c.ffn_dim)),
        H(static_cast<std::size_t>(c.heads)),
        dh(static_cast<std::size_t>(c.head_dim())),
        V(static_cast<std::size_t>(c.vocab_size)) {}
};

void gather_head(std::span<const double> src, std::span<double> dst, std::size_t T, std::size_t D,
                 std::size_t h, std::size_t dh) {
  for (std::size_t t = 0; t < T; ++t)
    std::copy_n(src.data() + t * D + h * dh, dh, dst.data() + t * dh);
}

void scatter_head(std::span<const double> src, std::span<double> dst, std::size_t T, std::size_t D,
                  std::size_t h, std::size_t dh) {
  for (std::size_t t = 0; t < T; ++t)
    std::copy_n(src.data() + t * dh, dh, dst.data() + t * D + h * dh);
}

void encode_sequence(const LMParams& params, std::span<const int> ids, Workspace& ws, Backend be) {
  const auto& cfg = params.config();
  const auto& lay = params.layout();
  const Dims d(cfg);
  const std::size_t T = ids.size();
  const auto W = params.values();
  auto at = [&](std::size_t off, std::size_t n) { return W.subspan(off, n); };

  ws.T = T;
  ws.key_valid.assign(T, 1);
  for (std::size_t t = 0; t < T; ++t) ws.key_valid[t] = ids[t] != special::PAD;

  std::vector<double> x(T * d.D);
  for (std::size_t t = 0; t < T; ++t) {
    const double* e = W.data() + lay.tok_emb + static_cast<std::size_t>(ids[t]) * d.D;
    const double* p = W.data() + lay.pos_emb + t * d.D;
    for (std::size_t j = 0; j < d.D; ++j) x[t * d.D + j] = e[j] + p[j];
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(d.dh));
  std::vector<double> qh(T * d.dh), kh(T * d.dh), vh(T * d.dh), ch(T * d.dh), tmp(T * d.D),
      tmpf(T * d.F);
  ws.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (std::size_t l = 0; l < ws.layers.size(); ++l) {
    const LayerLayout& L = lay.layers[l];
    LayerCache& c = ws.layers[l];
    c.x_in = x;
    c.a.resize(T * d.D);
    c.ln1_xhat.resize(T * d.D);
    c.ln1_rstd.resize(T);
    k::layernorm_forward(x, at(L.ln1_gain, d.D), at(L.ln1_offset, d.D), c.a, {c.ln1_xhat, c.ln1_rstd},
                         T, d.D);

    c.q.resize(T * d.D);
    c.kk.resize(T * d.D);
    c.v.resize(T * d.D);
    k::matmul(be, c.a, at(L.wq, d.D * d.D), c.q, T, d.D, d.D);
    k::add_bias(c.q, at(L.bq, d.D), T);
    k::matmul(be, c.a, at(L.wk, d.D * d.D), c.kk, T, d.D, d.D);
    k::add_bias(c.kk, at(L.bk, d.D), T);
    k::matmul(be, c.a, at(L.wv, d.D * d.D), c.v, T, d.D, d.D);
    k::add_bias(c.v, at(L.bv, d.D), T);

    c.probs.resize(d.H * T * T);
    c.ctx.resize(T * d.D);
    for (std::size_t h = 0; h < d.H; ++h) {
      gather_head(c.q, qh, T, d.D, h, d.dh);
      gather_head(c.kk, kh, T, d.D, h, d.dh);
      gather_head(c.v, vh, T, d.D, h, d.dh);
      std::span<double> P(c.probs.data() + h * T * T, T * T);
      k::matmul_bt(be, qh, kh, P, T, d.dh, T);
      for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < T; ++j)
          P[i * T + j] = ws.key_valid[j] ? P[i * T + j] * scale : -INFINITY;
      k::softmax_rows(P, T, T);
      k::matmul(be, P, vh, ch, T, T, d.dh);
      scatter_head(ch, c.ctx, T, d.D, h, d.dh);
    }

    k::matmul(be, c.ctx, at(L.wo, d.D * d.D), tmp, T, d.D, d.D);
    k::add_bias(tmp, at(L.bo, d.D), T);
    c.x_mid.resize(T * d.D);
    for (std::size_t i = 0; i < T * d.D; ++i) c.x_mid[i] = c.x_in[i] + tmp[i];

    c.b.resize(T * d.D);
    c.ln2_xhat.resize(T * d.D);
    c.ln2_rstd.resize(T);
    k::layernorm_forward(c.x_mid, at(L.ln2_gain, d.D), at(L.ln2_offset, d.D), c.b,
                         {c.ln2_xhat, c.ln2_rstd}, T, d.D);
    c.u.resize(T * d.F);
    c.g.resize(T * d.F);
    k::matmul(be, c.b, at(L.w1, d.D * d.F), c.u, T, d.D, d.F);
    k::add_bias(c.u, at(L.b1, d.F), T);
    for (std::size_t i = 0; i < T * d.F; ++i) c.g[i] = k::gelu(c.u[i]);
    k::matmul(be, c.g, at(L.w2, d.F * d.D), tmp, T, d.F, d.D);
    k::add_bias(tmp, at(L.b2, d.D), T);
    for (std::size_t i = 0; i < T * d.D; ++i) x[i] = c.x_mid[i] + tmp[i];
  }
  ws.x_out = x;
  ws.y.resize(T * d.D);
  ws.lnf_xhat.resize(T * d.D);
  ws.lnf_rstd.resize(T);
  k::layernorm_forward(x, at(lay.final_gain, d.D), at(lay.final_offset, d.D), ws.y,
                       {ws.lnf_xhat, ws.lnf_rstd}, T, d.D);
}

// Logits for the rows listed in `positions`, [M x V].
std::vector<double> head_logits(const LMParams& params, const Workspace& ws,
                                std::span<const int> positions, std::vector<double>& ym, Backend be) {
  const Dims d(params.config());
  const auto& lay = params.layout();
  const auto W = params.values();
  const std::size_t M = positions.size();
  ym.resize(M * d.D);
  for (std::size_t m = 0; m < M; ++m)
    std::copy_n(ws.y.data() + static_cast<std::size_t>(positions[m]) * d.D, d.D, ym.data() + m * d.D);
  std::vector<double> z(M * d.V);
  if (params.config().tie_output) {
    k::matmul_bt(be, ym, W.subspan(lay.tok_emb, d.V * d.D), z, M, d.D, d.V);
  } else {
    k::matmul(be, ym, W.subspan(lay.out_w, d.D * d.V), z, M, d.D, d.V);
  }
  k::add_bias(z, W.subspan(lay.out_bias, d.V), M);
  return z;
}

// dy: gradient w.r.t. the final normalized hidden states [T x D].
void backward_sequence(const LMParams& params, std::span<const int> ids, const Workspace& ws,
                       std::span<const double> dy, std::span<double> G, Backend be) {
  const auto& cfg = params.config();
  const auto& lay = params.layout();
  const Dims d(cfg);
  const std::size_t T = ws.T;
  const auto W = params.values();
  auto at = [&](std::size_t off, std::size_t n) { return W.subspan(off, n); };
  auto gat = [&](std::size_t off, std::size_t n) { return G.subspan(off, n); };

  std::vector<double> dx(T * d.D, 0.0);
  k::layernorm_backward(dy, at(lay.final_gain, d.D), ws.lnf_xhat, ws.lnf_rstd, dx,
                        gat(lay.final_gain, d.D), gat(lay.final_offset, d.D), T, d.D);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d.dh));
  std::vector<double> dbuf(T * d.D), dfbuf(T * d.F), dq(T * d.D), dk(T * d.D), dv(T * d.D),
      dctx(T * d.D), da(T * d.D), tmp(T * d.D);
  std::vector<double> qh(T * d.dh), kh(T * d.dh), vh(T * d.dh), dch(T * d.dh), dqh(T * d.dh),
      dkh(T * d.dh), dvh(T * d.dh), dP(T * T);

  for (std::size_t li = ws.layers.size(); li-- > 0;) {
    const LayerLayout& L = lay.layers[li];
    const LayerCache& c = ws.layers[li];

    // x_out = x_mid + ffn(ln2(x_mid)); dx doubles as d(x_out) and d(x_mid).
    k::matmul_at_acc(be, c.g, dx, gat(L.w2, d.F * d.D), T, d.F, d.D);
    k::bias_grad_acc(dx, gat(L.b2, d.D), T);
    k::matmul_bt(be, dx, at(L.w2, d.F * d.D), dfbuf, T, d.D, d.F);
    for (std::size_t i = 0; i < T * d.F; ++i) dfbuf[i] *= k::gelu_grad(c.u[i]);
    k::matmul_at_acc(be, c.b, dfbuf, gat(L.w1, d.D * d.F), T, d.D, d.F);
    k::bias_grad_acc(dfbuf, gat(L.b1, d.F), T);
    k::matmul_bt(be, dfbuf, at(L.w1, d.D * d.F), dbuf, T, d.F, d.D);
    k::layernorm_backward(dbuf, at(L.ln2_gain, d.D), c.ln2_xhat, c.ln2_rstd, dx,
                          gat(L.ln2_gain, d.D), gat(L.ln2_offset, d.D), T, d.D);

    // x_mid = x_in + attn(ln1(x_in))
    k::matmul_at_acc(be, c.ctx, dx, gat(L.wo, d.D * d.D), T, d.D, d.D);
    k::bias_grad_acc(dx, gat(L.bo, d.D), T);
    k::matmul_bt(be, dx, at(L.wo, d.D * d.D), dctx, T, d.D, d.D);

    for (std::size_t h = 0; h < d.H; ++h) {
      gather_head(c.q, qh, T, d.D, h, d.dh);
      gather_head(c.kk, kh, T, d.D, h, d.dh);
      gather_head(c.v, vh, T, d.D, h, d.dh);
      gather_head(dctx, dch, T, d.D, h, d.dh);
      std::span<const double> P(c.probs.data() + h * T * T, T * T);

      k::matmul_bt(be, dch, vh, dP, T, d.dh, T);
      std::fill(dvh.begin(), dvh.end(), 0.0);
      k::matmul_at_acc(be, P, dch, dvh, T, T, d.dh);
      for (std::size_t i = 0; i < T; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < T; ++j) dot += P[i * T + j] * dP[i * T + j];
        for (std::size_t j = 0; j < T; ++j) dP[i * T + j] = P[i * T + j] * (dP[i * T + j] - dot) * scale;
      }
      k::matmul(be, dP, kh, dqh, T, T, d.dh);
      std::fill(dkh.begin(), dkh.end(), 0.0);
      k::matmul_at_acc(be, dP, qh, dkh, T, T, d.dh);
      scatter_head(dqh, dq, T, d.D, h, d.dh);
      scatter_head(dkh, dk, T, d.D, h, d.dh);
      scatter_head(dvh, dv, T, d.D, h, d.dh);
    }

    k::matmul_at_acc(be, c.a, dq, gat(L.wq, d.D * d.D), T, d.D, d.D);
    k::bias_grad_acc(dq, gat(L.bq, d.D), T);
    k::matmul_at_acc(be, c.a, dk, gat(L.wk, d.D * d.D), T, d.D, d.D);
    k::bias_grad_acc(dk, gat(L.bk, d.D), T);
    k::matmul_at_acc(be, c.a, dv, gat(L.wv, d.D * d.D), T, d.D, d.D);
    k::bias_grad_acc(dv, gat(L.bv, d.D), T);

    k::matmul_bt(be, dq, at(L.wq, d.D * d.D), da, T, d.D, d.D);
    k::matmul_bt(be, dk, at(L.wk, d.D * d.D), tmp, T, d.D, d.D);
    for (std::size_t i = 0; i < T * d.D; ++i) da[i] += tmp[i];
    k::matmul_bt(be, dv, at(L.wv, d.D * d.D), tmp, T, d.D, d.D);
    for (std::size_t i = 0; i < T * d.D; ++i) da[i] += tmp[i];
    k::layernorm_backward(da, at(L.ln1_gain, d.D), c.ln1_xhat, c.ln1_rstd, dx,
                          gat(L.ln1_gain, d.D), gat(L.ln1_offset, d.D), T, d.D);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* ge = G.data() + lay.tok_emb + static_cast<std::size_t>(ids[t]) * d.D;
    double* gp = G.data() + lay.pos_emb + t * d.D;
    for (std::size_t j = 0; j < d.D; ++j) {
      ge[j] += dx[t * d.D + j];
      gp[j] += dx[t * d.D + j];
    }
  }
}

void check_sequence(const LMConfig& cfg, std::span<const int> ids, std::span<const int> positions) {
  if (ids.size() > static_cast<std::size_t>(cfg.max_seq_len))
    throw SequenceTooLong("sequence of length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
  if (ids.empty()) throw ConfigMismatch("empty sequence");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size) throw ConfigMismatch("token id outside the vocabulary");
  for (int p : positions)
    if (p < 0 || static_cast<std::size_t>(p) >= ids.size())
      throw ConfigMismatch("requested position outside the sequence");
}

// Trailing PAD rows cannot influence any other row, so they are dropped unless
// a requested position lives there.
std::span<const int> effective(std::span<const int> ids, std::span<const int> positions) {
  std::size_t T = ids.size();
  while (T > 1 && ids[T - 1] == special::PAD) --T;
  for (int p : positions) T = std::max(T, static_cast<std::size_t>(p) + 1);
  return ids.first(T);
}

struct SequenceResult {
  double nll_sum = 0.0;
};

// Loss of one sequence; when `G` is non-empty also accumulates gradients of
// (sum of nll) * grad_scale into it.
SequenceResult run_sequence(const LMParams& params, std::span<const int> full_ids,
                            std::span<const int> positions, std::span<const int> targets,
                            double grad_scale, std::span<double> G, Backend be) {
  const Dims d(params.config());
  const auto ids = effective(full_ids, positions);
  Workspace ws;
  encode_sequence(params, ids, ws, be);
  std::vector<double> ym;
  std::vector<double> z = head_logits(params, ws, positions, ym, be);
  const std::size_t M = positions.size();

  SequenceResult r;
  for (std::size_t m = 0; m < M; ++m) {
    double* row = z.data() + m * d.V;
    const double mx = *std::max_element(row, row + d.V);
    double sum = 0.0;
    for (std::size_t v = 0; v < d.V; ++v) sum += std::exp(row[v] - mx);
    const double lse = mx + std::log(sum);
    r.nll_sum += lse - row[static_cast<std::size_t>(targets[m])];
    if (!G.empty()) {
      for (std::size_t v = 0; v < d.V; ++v) row[v] = std::exp(row[v] - lse) * grad_scale;
      row[static_cast<std::size_t>(targets[m])] -= grad_scale;
    }
  }
  if (G.empty()) return r;

  const auto& lay = params.layout();
  const auto W = params.values();
  std::vector<double> dym(M * d.D);
  if (params.config().tie_output) {
    k::matmul_at_acc(be, z, ym, G.subspan(lay.tok_emb, d.V * d.D), M, d.V, d.D);
    k::matmul(be, z, W.subspan(lay.tok_emb, d.V * d.D), dym, M, d.V, d.D);
  } else {
    k::matmul_at_acc(be, ym, z, G.subspan(lay.out_w, d.D * d.V), M, d.D, d.V);
    k::matmul_bt(be, z, W.subspan(lay.out_w, d.D * d.V), dym, M, d.V, d.D);
  }
  k::bias_grad_acc(z, G.subspan(lay.out_bias, d.V), M);

  std::vector<double> dy(ws.T * d.D, 0.0);
  for (std::size_t m = 0; m < M; ++m) {
    double* dst = dy.data() + static_cast<std::size_t>(positions[m]) * d.D;
    for (std::size_t j = 0; j < d.D; ++j) dst[j] += dym[m * d.D + j];
  }
  backward_sequence(params, ids, ws, dy, G, be);
  return r;
}

void check_batch(const LMParams& params, const MaskedBatch& batch) {
  if (batch.inputs.size() != batch.positions.size() || batch.inputs.size() != batch.targets.size())
    throw ConfigMismatch("batch inputs, positions and targets differ in length");
  if (batch.inputs.empty()) throw EmptyMask("empty batch");
  for (std::size_t s = 0; s < batch.inputs.size(); ++s) {
    if (batch.positions[s].empty()) throw EmptyMask("sequence " + std::to_string(s) + " has no masked position");
    if (batch.positions[s].size() != batch.targets[s].size())
      throw ConfigMismatch("positions and targets differ in length");
    check_sequence(params.config(), batch.inputs[s], batch.positions[s]);
    for (int t : batch.targets[s])
      if (t < 0 || t >= params.config().vocab_size) throw ConfigMismatch("target outside the vocabulary");
  }
}

}  // namespace

std::vector<std::vector<double>> logits(const LMParams& params, std::span<const int> ids,
                                        std::span<const int> positions, const EncoderOptions& opts) {
  check_sequence(params.config(), ids, positions);
  const Dims d(params.config());
  Workspace ws;
  encode_sequence(params, effective(ids, positions), ws, opts.backend);
  std::vector<double> ym;
  const auto z = head_logits(params, ws, positions, ym, opts.backend);
  std::vector<std::vector<double>> out(positions.size());
  for (std::size_t m = 0; m < positions.size(); ++m)
    out[m].assign(z.begin() + static_cast<std::ptrdiff_t>(m * d.V),
                  z.begin() + static_cast<std::ptrdiff_t>((m + 1) * d.V));
  return out;
}

std::vector<std::vector<Distribution>> forward(const LMParams& params,
                                               std::span<const std::vector<int>> ids,
                                               std::span<const std::vector<int>> mask_positions,
                                               const EncoderOptions& opts) {
  if (ids.size() != mask_positions.size())
    throw ConfigMismatch("ids and mask_positions differ in batch size");
  std::vector<std::vector<Distribution>> out(ids.size());
  for (std::size_t s = 0; s < ids.size(); ++s) {
    out[s] = logits(params, ids[s], mask_positions[s], opts);
    for (auto& row : out[s]) k::softmax_rows(row, 1, row.size());
  }
  return out;
}

LossAndGrads loss_and_grads(const LMParams& params, const MaskedBatch& batch,
                            const EncoderOptions& opts) {
  check_batch(params, batch);
  const std::size_t S = batch.inputs.size();
  const std::size_t P = params.values().size();
  LossAndGrads out;
  out.masked = batch.masked_count();
  out.grads.assign(P, 0.0);
  const double scale = 1.0 / static_cast<double>(out.masked);

  // Sequences are independent; each writes its own gradient buffer and the
  // buffers are folded into the total in sequence order, so the result does
  // not depend on the thread count.
  const std::size_t group = std::max<std::size_t>(1, std::min<std::size_t>(S, omp_get_max_threads()));
  std::vector<std::vector<double>> buffers(group, std::vector<double>(P));
  std::vector<double> nll(S, 0.0);
  for (std::size_t start = 0; start < S; start += group) {
    const std::size_t count = std::min(group, S - start);
#pragma omp parallel for schedule(static) if (count > 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(count); ++i) {
      const std::size_t s = start + static_cast<std::size_t>(i);
      auto& buf = buffers[static_cast<std::size_t>(i)];
      std::fill(buf.begin(), buf.end(), 0.0);
      nll[s] = run_sequence(params, batch.inputs[s], batch.positions[s], batch.targets[s], scale, buf,
                            opts.backend)
                   .nll_sum;
    }
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t p = 0; p < P; ++p) out.grads[p] += buffers[i][p];
  }
  double total = 0.0;
  for (double v : nll) total += v;
  out.loss = total * scale;
  return out;
}

double masked_loss(const LMParams& params, const MaskedBatch& batch, const EncoderOptions& opts) {
  check_batch(params, batch);
  const std::size_t S = batch.inputs.size();
  std::vector<double> nll(S, 0.0);
#pragma omp parallel for schedule(static) if (S > 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(S); ++i) {
    const auto s = static_cast<std::size_t>(i);
    nll[s] = run_sequence(params, batch.inputs[s], batch.positions[s], batch.targets[s], 0.0, {},
                          opts.backend)
                 .nll_sum;
  }
  double total = 0.0;
  for (double v : nll) total += v;
  return total * (1.0 / static_cast<double>(batch.masked_count()));
}

}  // namespace brickseq
