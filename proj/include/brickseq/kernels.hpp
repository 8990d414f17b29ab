#pragma once

// Dense row-major kernels used by the transformer. Every operation exists in
// two forms: `serial::` is the plain textbook loop kept as the reference, and
// `parallel::` is the cache-friendly OpenMP version. Both accumulate each
// output element in the same order, so their results are bit-identical.

#include <cstddef>
#include <span>

namespace brickseq::kernels {

enum class Backend { serial, parallel };

namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * b[m x n]
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

}  // namespace serial

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

}  // namespace parallel

void matmul(Backend be, std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_bt(Backend be, std::span<const double> a, std::span<const double> b,
               std::span<double> c, std::size_t m, std::size_t k, std::size_t n);
void matmul_at_acc(Backend be, std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// Row-wise helpers; cheap enough that one implementation serves both backends.
void add_bias(std::span<double> x, std::span<const double> bias, std::size_t rows);
void bias_grad_acc(std::span<const double> dy, std::span<double> dbias, std::size_t rows);

// In-place softmax of each row. Entries equal to -inf come out as exactly 0.
void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols);

double gelu(double x);
double gelu_grad(double x);

struct LayerNormCache {
  // Per-row normalized values and reciprocal standard deviations.
  std::span<double> xhat;
  std::span<double> rstd;
};

inline constexpr double kLayerNormEps = 1e-5;

void layernorm_forward(std::span<const double> x, std::span<const double> gain,
                       std::span<const double> offset, std::span<double> y, LayerNormCache cache,
                       std::size_t rows, std::size_t dim);
// dx += d(loss)/dx; dgain, doffset accumulated.
void layernorm_backward(std::span<const double> dy, std::span<const double> gain,
                        std::span<const double> xhat, std::span<const double> rstd,
                        std::span<double> dx, std::span<double> dgain, std::span<double> doffset,
                        std::size_t rows, std::size_t dim);

}  // namespace brickseq::kernels
