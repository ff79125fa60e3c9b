#ifndef ASRQA_KERNELS_H
#define ASRQA_KERNELS_H

#include <cstddef>

// Dense numeric kernels. Every kernel comes in two variants: a plain serial
// reference under kernels::serial and an OpenMP-parallel version under
// kernels::. The parallel versions split work over output elements only, so
// each element is accumulated in the same order as the serial code and the
// two variants produce bit-identical results. The dispatching entry points
// fall back to serial when parallelism is disabled, the problem is small, or
// the caller is already inside a parallel region.

namespace asrqa::kernels {

// Runtime switch, on by default when compiled with OpenMP.
bool parallel_enabled();
void set_parallel(bool on);

// Work below this many output elements always runs serially.
inline constexpr std::size_t kParallelCutoff = 4096;

namespace serial {

// c = a[m x k] * b[k x n], c preallocated m x n. accumulate adds into c.
void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);
// c = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);
// c = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);

enum class Unary { Relu, Tanh, Sigmoid, Log, ReluGrad, TanhGrad, SigmoidGrad };
void map_unary(Unary op, const double* x, double* y, std::size_t n);

// Row-wise stable softmax of x[rows x cols] into y.
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);
void map_unary(serial::Unary op, const double* x, double* y, std::size_t n);
void softmax_rows(const double* x, double* y, int rows, int cols);

}  // namespace asrqa::kernels

#endif
