#include "mgdin/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mgdin::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::OpenMP
#else
    Backend::Serial
#endif
};
}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) { g_backend.store(b, std::memory_order_relaxed); }

bool openmp_compiled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define MGDIN_DISPATCH(fn, ...)                    \
  do {                                             \
    if (backend() == Backend::OpenMP)              \
      return omp::fn(__VA_ARGS__);                 \
    return serial::fn(__VA_ARGS__);                \
  } while (0)

void matmul(const double* a, const double* b, double* c, i64 batch, i64 p,
            i64 q, i64 r, bool a_bcast, bool b_bcast) {
  MGDIN_DISPATCH(matmul, a, b, c, batch, p, q, r, a_bcast, b_bcast);
}
void matmul_grad_a(const double* dc, const double* b, double* da, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast) {
  MGDIN_DISPATCH(matmul_grad_a, dc, b, da, batch, p, q, r, a_bcast, b_bcast);
}
void matmul_grad_b(const double* a, const double* dc, double* db, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast) {
  MGDIN_DISPATCH(matmul_grad_b, a, dc, db, batch, p, q, r, a_bcast, b_bcast);
}
void ew_binary(BinaryOp op, const double* a, i64 an, const double* b, i64 bn,
               double* out, i64 n) {
  MGDIN_DISPATCH(ew_binary, op, a, an, b, bn, out, n);
}
void ew_binary_grad_a(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* ga, i64 n) {
  MGDIN_DISPATCH(ew_binary_grad_a, op, a, an, b, bn, gout, ga, n);
}
void ew_binary_grad_b(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* gb, i64 n) {
  MGDIN_DISPATCH(ew_binary_grad_b, op, a, an, b, bn, gout, gb, n);
}
void ew_unary(UnaryOp op, const double* x, double* y, i64 n, double c0, double c1) {
  MGDIN_DISPATCH(ew_unary, op, x, y, n, c0, c1);
}
void ew_unary_grad(UnaryOp op, const double* x, const double* y,
                   const double* gout, double* gx, i64 n, double c0, double c1) {
  MGDIN_DISPATCH(ew_unary_grad, op, x, y, gout, gx, n, c0, c1);
}
void transpose_last_two(const double* x, double* y, i64 batch, i64 p, i64 q) {
  MGDIN_DISPATCH(transpose_last_two, x, y, batch, p, q);
}
void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mean, double* rstd, i64 rows, i64 d, double eps) {
  MGDIN_DISPATCH(layer_norm, x, gain, bias, y, mean, rstd, rows, d, eps);
}
void layer_norm_grad(const double* x, const double* gain, const double* mean,
                     const double* rstd, const double* gout, double* gx,
                     double* ggain, double* gbias, i64 rows, i64 d) {
  MGDIN_DISPATCH(layer_norm_grad, x, gain, mean, rstd, gout, gx, ggain, gbias, rows, d);
}
double reduce_sum(const double* x, i64 n) {
  if (backend() == Backend::OpenMP) return omp::reduce_sum(x, n);
  return serial::reduce_sum(x, n);
}
void accumulate(double* dst, const double* src, i64 n) {
  MGDIN_DISPATCH(accumulate, dst, src, n);
}
void accumulate_scaled(double* dst, const double* src, double c, i64 n) {
  MGDIN_DISPATCH(accumulate_scaled, dst, src, c, n);
}
void gather_rows(const double* table, i64 d, const i64* ids, i64 nrows, double* out) {
  MGDIN_DISPATCH(gather_rows, table, d, ids, nrows, out);
}
void scatter_add_rows(const double* gout, const i64* ids, i64 nrows, i64 d,
                      double* gtable) {
  MGDIN_DISPATCH(scatter_add_rows, gout, ids, nrows, d, gtable);
}

#undef MGDIN_DISPATCH

void parallel_for(i64 n, i64 ops_per_item, const std::function<void(i64)>& fn) {
  constexpr i64 kThreshold = 262144;
  if (backend() == Backend::OpenMP && n * ops_per_item >= kThreshold) {
#pragma omp parallel for schedule(static)
    for (i64 i = 0; i < n; ++i) fn(i);
  } else {
    for (i64 i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace mgdin::kernels
