#include "asrqa/kernels.h"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace asrqa::kernels {

namespace {
std::atomic<bool> g_parallel{
#ifdef _OPENMP
    true
#else
    false
#endif
};

inline bool go_parallel(std::size_t out_elems) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) &&
         out_elems >= kParallelCutoff && !omp_in_parallel();
#else
  (void)out_elems;
  return false;
#endif
}
}  // namespace

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  // a is k x m, c[i][j] = sum_p a[p][i] * b[p][j]
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      double av = a[static_cast<std::size_t>(p) * m + i];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void map_unary(Unary op, const double* x, double* y, std::size_t n) {
  switch (op) {
    case Unary::Relu:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case Unary::Tanh:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
    case Unary::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
      break;
    case Unary::Log:
      for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
      break;
    case Unary::ReluGrad:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? 1.0 : 0.0;
      break;
    case Unary::TanhGrad:
      for (std::size_t i = 0; i < n; ++i) {
        double t = std::tanh(x[i]);
        y[i] = 1.0 - t * t;
      }
      break;
    case Unary::SigmoidGrad:
      for (std::size_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = s * (1.0 - s);
      }
      break;
  }
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* xr = x + static_cast<std::size_t>(i) * cols;
    double* yr = y + static_cast<std::size_t>(i) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j)
      if (xr[j] > mx) mx = xr[j];
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (int j = 0; j < cols; ++j) yr[j] /= z;
  }
}

}  // namespace serial

// Parallel variants: identical per-row arithmetic, rows split over threads.

void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  std::size_t out = static_cast<std::size_t>(m) * n;
  if (!go_parallel(out)) {
    serial::matmul_nn(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    serial::matmul_nn(a + static_cast<std::size_t>(i) * k, b,
                      c + static_cast<std::size_t>(i) * n, 1, k, n,
                      accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  std::size_t out = static_cast<std::size_t>(m) * n;
  if (!go_parallel(out)) {
    serial::matmul_nt(a, b, c, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    serial::matmul_nt(a + static_cast<std::size_t>(i) * k, b,
                      c + static_cast<std::size_t>(i) * n, 1, k, n,
                      accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  std::size_t out = static_cast<std::size_t>(m) * n;
  if (!go_parallel(out)) {
    serial::matmul_tn(a, b, c, m, k, n, accumulate);
    return;
  }
  // Column block of the output per thread; a is read transposed so each
  // output row i walks a with stride m.
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      double av = a[static_cast<std::size_t>(p) * m + i];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void map_unary(serial::Unary op, const double* x, double* y, std::size_t n) {
  if (!go_parallel(n)) {
    serial::map_unary(op, x, y, n);
    return;
  }
#ifdef _OPENMP
  int chunks = omp_get_max_threads();
  std::size_t step = (n + chunks - 1) / chunks;
#pragma omp parallel for schedule(static)
  for (int t = 0; t < chunks; ++t) {
    std::size_t lo = t * step;
    if (lo >= n) continue;
    std::size_t hi = lo + step < n ? lo + step : n;
    serial::map_unary(op, x + lo, y + lo, hi - lo);
  }
#endif
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  std::size_t out = static_cast<std::size_t>(rows) * cols;
  if (!go_parallel(out)) {
    serial::softmax_rows(x, y, rows, cols);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    serial::softmax_rows(x + static_cast<std::size_t>(i) * cols,
                         y + static_cast<std::size_t>(i) * cols, 1, cols);
}

}  // namespace asrqa::kernels
