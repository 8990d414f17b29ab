#include "brickseq/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace brickseq::kernels {

namespace {
// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 16;

using Index = std::ptrdiff_t;
}  // namespace

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = sum;
    }
  }
}

void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = c[p * n + j];
      for (std::size_t i = 0; i < m; ++i) sum += a[i * k + p] * b[i * n + j];
      c[p * n + j] = sum;
    }
  }
}

}  // namespace serial

namespace parallel {

// i-p-j order: the inner loop streams a row of b and c, and each c element
// still receives its products in ascending p, matching the reference.
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* crow = pc + i * n;
    std::fill(crow, crow + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += arow[p] * brow[p];
      pc[i * n + j] = sum;
    }
  }
}

// Each thread owns whole rows of c; rows of a and b are visited in ascending
// i so accumulation order matches the reference.
void matmul_at_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelThreshold)
  for (Index p = 0; p < static_cast<Index>(k); ++p) {
    double* crow = pc + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[i * k + p];
      const double* brow = pb + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace parallel

void matmul(Backend be, std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  if (be == Backend::serial) serial::matmul(a, b, c, m, k, n);
  else parallel::matmul(a, b, c, m, k, n);
}

void matmul_bt(Backend be, std::span<const double> a, std::span<const double> b,
               std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  if (be == Backend::serial) serial::matmul_bt(a, b, c, m, k, n);
  else parallel::matmul_bt(a, b, c, m, k, n);
}

void matmul_at_acc(Backend be, std::span<const double> a, std::span<const double> b,
                   std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  if (be == Backend::serial) serial::matmul_at_acc(a, b, c, m, k, n);
  else parallel::matmul_at_acc(a, b, c, m, k, n);
}

void add_bias(std::span<double> x, std::span<const double> bias, std::size_t rows) {
  const std::size_t n = bias.size();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) x[i * n + j] += bias[j];
}

void bias_grad_acc(std::span<const double> dy, std::span<double> dbias, std::size_t rows) {
  const std::size_t n = dbias.size();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < n; ++j) dbias[j] += dy[i * n + j];
}

void softmax_rows(std::span<double> x, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* row = x.data() + i * cols;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::isinf(row[j]) && row[j] < 0 ? 0.0 : std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= sum;
  }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double inner = kGeluC * (x + kGeluA * x * x * x);
  const double t = std::tanh(inner);
  const double dinner = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

void layernorm_forward(std::span<const double> x, std::span<const double> gain,
                       std::span<const double> offset, std::span<double> y, LayerNormCache cache,
                       std::size_t rows, std::size_t dim) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.data() + i * dim;
    double mean = 0.0;
    for (std::size_t j = 0; j < dim; ++j) mean += xr[j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (std::size_t j = 0; j < dim; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(dim);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.rstd[i] = rstd;
    for (std::size_t j = 0; j < dim; ++j) {
      const double h = (xr[j] - mean) * rstd;
      cache.xhat[i * dim + j] = h;
      y[i * dim + j] = h * gain[j] + offset[j];
    }
  }
}

void layernorm_backward(std::span<const double> dy, std::span<const double> gain,
                        std::span<const double> xhat, std::span<const double> rstd,
                        std::span<double> dx, std::span<double> dgain, std::span<double> doffset,
                        std::size_t rows, std::size_t dim) {
  const double inv_dim = 1.0 / static_cast<double>(dim);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* dyr = dy.data() + i * dim;
    const double* hr = xhat.data() + i * dim;
    double mean_dh = 0.0;
    double mean_dh_h = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double dh = dyr[j] * gain[j];
      mean_dh += dh;
      mean_dh_h += dh * hr[j];
      dgain[j] += dyr[j] * hr[j];
      doffset[j] += dyr[j];
    }
    mean_dh *= inv_dim;
    mean_dh_h *= inv_dim;
    for (std::size_t j = 0; j < dim; ++j) {
      const double dh = dyr[j] * gain[j];
      dx[i * dim + j] += rstd[i] * (dh - mean_dh - hr[j] * mean_dh_h);
    }
  }
}

}  // namespace brickseq::kernels
