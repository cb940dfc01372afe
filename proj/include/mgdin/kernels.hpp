#pragma once

#include <cstdint>
#include <functional>

// Dense numeric kernels behind the tensor ops. Every kernel exists twice:
// a plain serial reference (kernels::serial) and an OpenMP version
// (kernels::omp). The active backend is a process-wide switch; the two
// backends produce bit-identical results because every parallel loop is
// partitioned over output elements and all inner summations keep a fixed
// order regardless of thread count.

namespace mgdin::kernels {

using i64 = std::int64_t;

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
// True when compiled with OpenMP support.
bool openmp_compiled();
int max_threads();

enum class BinaryOp { Add, Sub, Mul };
enum class UnaryOp { Sigmoid, Relu, Log, Scale, Clamp };

namespace serial {

void matmul(const double* a, const double* b, double* c, i64 batch, i64 p,
            i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_a(const double* dc, const double* b, double* da, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_b(const double* a, const double* dc, double* db, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);

// Suffix ("leading batch dimension") broadcast: operand sizes an, bn divide n
// and index with i % an / i % bn.
void ew_binary(BinaryOp op, const double* a, i64 an, const double* b, i64 bn,
               double* out, i64 n);
void ew_binary_grad_a(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* ga, i64 n);
void ew_binary_grad_b(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* gb, i64 n);

void ew_unary(UnaryOp op, const double* x, double* y, i64 n, double c0, double c1);
void ew_unary_grad(UnaryOp op, const double* x, const double* y,
                   const double* gout, double* gx, i64 n, double c0, double c1);

void transpose_last_two(const double* x, double* y, i64 batch, i64 p, i64 q);

void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mean, double* rstd, i64 rows, i64 d, double eps);
void layer_norm_grad(const double* x, const double* gain, const double* mean,
                     const double* rstd, const double* gout, double* gx,
                     double* ggain, double* gbias, i64 rows, i64 d);

double reduce_sum(const double* x, i64 n);

// dst += src elementwise.
void accumulate(double* dst, const double* src, i64 n);
void accumulate_scaled(double* dst, const double* src, double c, i64 n);

void gather_rows(const double* table, i64 d, const i64* ids, i64 nrows, double* out);
// Scatter has write conflicts between rows, so it is serial in both
// backends; gradient accumulation into shared parameters stays deterministic.
void scatter_add_rows(const double* gout, const i64* ids, i64 nrows, i64 d,
                      double* gtable);

}  // namespace serial

namespace omp {

void matmul(const double* a, const double* b, double* c, i64 batch, i64 p,
            i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_a(const double* dc, const double* b, double* da, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_b(const double* a, const double* dc, double* db, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);

void ew_binary(BinaryOp op, const double* a, i64 an, const double* b, i64 bn,
               double* out, i64 n);
void ew_binary_grad_a(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* ga, i64 n);
void ew_binary_grad_b(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* gb, i64 n);

void ew_unary(UnaryOp op, const double* x, double* y, i64 n, double c0, double c1);
void ew_unary_grad(UnaryOp op, const double* x, const double* y,
                   const double* gout, double* gx, i64 n, double c0, double c1);

void transpose_last_two(const double* x, double* y, i64 batch, i64 p, i64 q);

void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mean, double* rstd, i64 rows, i64 d, double eps);
void layer_norm_grad(const double* x, const double* gain, const double* mean,
                     const double* rstd, const double* gout, double* gx,
                     double* ggain, double* gbias, i64 rows, i64 d);

double reduce_sum(const double* x, i64 n);

void accumulate(double* dst, const double* src, i64 n);
void accumulate_scaled(double* dst, const double* src, double c, i64 n);

void gather_rows(const double* table, i64 d, const i64* ids, i64 nrows, double* out);
void scatter_add_rows(const double* gout, const i64* ids, i64 nrows, i64 d,
                      double* gtable);

}  // namespace omp

// Dispatch on the active backend.
void matmul(const double* a, const double* b, double* c, i64 batch, i64 p,
            i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_a(const double* dc, const double* b, double* da, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);
void matmul_grad_b(const double* a, const double* dc, double* db, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast);
void ew_binary(BinaryOp op, const double* a, i64 an, const double* b, i64 bn,
               double* out, i64 n);
void ew_binary_grad_a(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* ga, i64 n);
void ew_binary_grad_b(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* gb, i64 n);
void ew_unary(UnaryOp op, const double* x, double* y, i64 n, double c0, double c1);
void ew_unary_grad(UnaryOp op, const double* x, const double* y,
                   const double* gout, double* gx, i64 n, double c0, double c1);
void transpose_last_two(const double* x, double* y, i64 batch, i64 p, i64 q);
void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mean, double* rstd, i64 rows, i64 d, double eps);
void layer_norm_grad(const double* x, const double* gain, const double* mean,
                     const double* rstd, const double* gout, double* gx,
                     double* ggain, double* gbias, i64 rows, i64 d);
double reduce_sum(const double* x, i64 n);
void accumulate(double* dst, const double* src, i64 n);
void accumulate_scaled(double* dst, const double* src, double c, i64 n);
void gather_rows(const double* table, i64 d, const i64* ids, i64 nrows, double* out);
void scatter_add_rows(const double* gout, const i64* ids, i64 nrows, i64 d,
                      double* gtable);

// Runs fn(i) for i in [0, n). Parallel under the OpenMP backend when the
// total estimated work n * ops_per_item is large enough; every index is
// handled by exactly one invocation, so any conflict-free fn is
// deterministic for any thread count.
void parallel_for(i64 n, i64 ops_per_item, const std::function<void(i64)>& fn);

}  // namespace mgdin::kernels
