#include "mgdin/kernels.hpp"

#include <algorithm>
#include <cmath>

// Reference implementations: straightforward loops, no threading. The OpenMP
// backend must reproduce these bit-for-bit, so any change to a loop order or
// summation structure here has to be mirrored in kernels_omp.cpp.

namespace mgdin::kernels::serial {

namespace {
constexpr i64 kReduceChunk = 4096;

inline double unary_fwd(UnaryOp op, double x, double c0, double c1) {
  switch (op) {
    case UnaryOp::Sigmoid:
      // Split by sign to stay finite for large |x|.
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
    case UnaryOp::Relu:
      return x > 0.0 ? x : 0.0;
    case UnaryOp::Log:
      return std::log(x);
    case UnaryOp::Scale:
      return c0 * x;
    case UnaryOp::Clamp:
      return std::min(std::max(x, c0), c1);
  }
  return 0.0;
}

inline double unary_local_grad(UnaryOp op, double x, double y, double c0, double c1) {
  switch (op) {
    case UnaryOp::Sigmoid:
      return y * (1.0 - y);
    case UnaryOp::Relu:
      return x > 0.0 ? 1.0 : 0.0;
    case UnaryOp::Log:
      return 1.0 / x;
    case UnaryOp::Scale:
      return c0;
    case UnaryOp::Clamp:
      return (x >= c0 && x <= c1) ? 1.0 : 0.0;
  }
  return 0.0;
}

inline double binary_fwd(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add:
      return a + b;
    case BinaryOp::Sub:
      return a - b;
    case BinaryOp::Mul:
      return a * b;
  }
  return 0.0;
}
}  // namespace

void matmul(const double* a, const double* b, double* c, i64 batch, i64 p,
            i64 q, i64 r, bool a_bcast, bool b_bcast) {
  for (i64 bt = 0; bt < batch; ++bt) {
    const double* ab = a + (a_bcast ? 0 : bt * p * q);
    const double* bb = b + (b_bcast ? 0 : bt * q * r);
    double* cb = c + bt * p * r;
    for (i64 i = 0; i < p; ++i) {
      double* crow = cb + i * r;
      std::fill(crow, crow + r, 0.0);
      for (i64 k = 0; k < q; ++k) {
        const double aik = ab[i * q + k];
        const double* brow = bb + k * r;
        for (i64 j = 0; j < r; ++j) crow[j] += aik * brow[j];
      }
    }
  }
}

void matmul_grad_a(const double* dc, const double* b, double* da, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast) {
  if (!a_bcast) {
    // da[bt,i,j] += dot(dc[bt,i,:], b[bt,j,:])
    for (i64 bt = 0; bt < batch; ++bt) {
      const double* dcb = dc + bt * p * r;
      const double* bb = b + (b_bcast ? 0 : bt * q * r);
      double* dab = da + bt * p * q;
      for (i64 i = 0; i < p; ++i) {
        for (i64 j = 0; j < q; ++j) {
          double s = 0.0;
          const double* dcrow = dcb + i * r;
          const double* brow = bb + j * r;
          for (i64 k = 0; k < r; ++k) s += dcrow[k] * brow[k];
          dab[i * q + j] += s;
        }
      }
    }
  } else {
    // Shared A: reduce over the batch in fixed order per output element.
    for (i64 i = 0; i < p; ++i) {
      for (i64 bt = 0; bt < batch; ++bt) {
        const double* dcrow = dc + bt * p * r + i * r;
        const double* bb = b + (b_bcast ? 0 : bt * q * r);
        for (i64 j = 0; j < q; ++j) {
          double s = 0.0;
          const double* brow = bb + j * r;
          for (i64 k = 0; k < r; ++k) s += dcrow[k] * brow[k];
          da[i * q + j] += s;
        }
      }
    }
  }
}

void matmul_grad_b(const double* a, const double* dc, double* db, i64 batch,
                   i64 p, i64 q, i64 r, bool a_bcast, bool b_bcast) {
  if (!b_bcast) {
    // db[bt,j,k] += sum_i a[bt,i,j] * dc[bt,i,k]
    for (i64 bt = 0; bt < batch; ++bt) {
      const double* ab = a + (a_bcast ? 0 : bt * p * q);
      const double* dcb = dc + bt * p * r;
      double* dbb = db + bt * q * r;
      for (i64 j = 0; j < q; ++j) {
        double* dbrow = dbb + j * r;
        for (i64 i = 0; i < p; ++i) {
          const double aij = ab[i * q + j];
          const double* dcrow = dcb + i * r;
          for (i64 k = 0; k < r; ++k) dbrow[k] += aij * dcrow[k];
        }
      }
    }
  } else {
    for (i64 j = 0; j < q; ++j) {
      double* dbrow = db + j * r;
      for (i64 bt = 0; bt < batch; ++bt) {
        const double* ab = a + (a_bcast ? 0 : bt * p * q);
        const double* dcb = dc + bt * p * r;
        for (i64 i = 0; i < p; ++i) {
          const double aij = ab[i * q + j];
          const double* dcrow = dcb + i * r;
          for (i64 k = 0; k < r; ++k) dbrow[k] += aij * dcrow[k];
        }
      }
    }
  }
}

void ew_binary(BinaryOp op, const double* a, i64 an, const double* b, i64 bn,
               double* out, i64 n) {
  if (an == n && bn == n) {
    for (i64 i = 0; i < n; ++i) out[i] = binary_fwd(op, a[i], b[i]);
  } else {
    for (i64 i = 0; i < n; ++i) out[i] = binary_fwd(op, a[i % an], b[i % bn]);
  }
}

void ew_binary_grad_a(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* ga, i64 n) {
  (void)a;
  if (an == n) {
    for (i64 i = 0; i < n; ++i) {
      double g = gout[i];
      if (op == BinaryOp::Mul) g *= b[i % bn];
      ga[i] += g;
    }
  } else {
    // Broadcast operand: strided reduction, one output element per index.
    for (i64 j = 0; j < an; ++j) {
      double s = 0.0;
      for (i64 i = j; i < n; i += an) {
        double g = gout[i];
        if (op == BinaryOp::Mul) g *= b[i % bn];
        s += g;
      }
      ga[j] += s;
    }
  }
}

void ew_binary_grad_b(BinaryOp op, const double* a, i64 an, const double* b,
                      i64 bn, const double* gout, double* gb, i64 n) {
  (void)b;
  const double sign = (op == BinaryOp::Sub) ? -1.0 : 1.0;
  if (bn == n) {
    for (i64 i = 0; i < n; ++i) {
      double g = gout[i] * sign;
      if (op == BinaryOp::Mul) g = gout[i] * a[i % an];
      gb[i] += g;
    }
  } else {
    for (i64 j = 0; j < bn; ++j) {
      double s = 0.0;
      for (i64 i = j; i < n; i += bn) {
        double g = gout[i] * sign;
        if (op == BinaryOp::Mul) g = gout[i] * a[i % an];
        s += g;
      }
      gb[j] += s;
    }
  }
}

void ew_unary(UnaryOp op, const double* x, double* y, i64 n, double c0, double c1) {
  for (i64 i = 0; i < n; ++i) y[i] = unary_fwd(op, x[i], c0, c1);
}

void ew_unary_grad(UnaryOp op, const double* x, const double* y,
                   const double* gout, double* gx, i64 n, double c0, double c1) {
  for (i64 i = 0; i < n; ++i)
    gx[i] += gout[i] * unary_local_grad(op, x[i], y[i], c0, c1);
}

void transpose_last_two(const double* x, double* y, i64 batch, i64 p, i64 q) {
  for (i64 bt = 0; bt < batch; ++bt) {
    const double* xb = x + bt * p * q;
    double* yb = y + bt * p * q;
    for (i64 i = 0; i < p; ++i)
      for (i64 j = 0; j < q; ++j) yb[j * p + i] = xb[i * q + j];
  }
}

void layer_norm(const double* x, const double* gain, const double* bias,
                double* y, double* mean, double* rstd, i64 rows, i64 d, double eps) {
  for (i64 r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    double m = 0.0;
    for (i64 j = 0; j < d; ++j) m += xr[j];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (i64 j = 0; j < d; ++j) {
      const double c = xr[j] - m;
      v += c * c;
    }
    v /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(v + eps);
    mean[r] = m;
    rstd[r] = rs;
    double* yr = y + r * d;
    for (i64 j = 0; j < d; ++j) yr[j] = (xr[j] - m) * rs * gain[j] + bias[j];
  }
}

void layer_norm_grad(const double* x, const double* gain, const double* mean,
                     const double* rstd, const double* gout, double* gx,
                     double* ggain, double* gbias, i64 rows, i64 d) {
  const double inv_d = 1.0 / static_cast<double>(d);
  for (i64 r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    const double* gr = gout + r * d;
    double* gxr = gx + r * d;
    const double m = mean[r];
    const double rs = rstd[r];
    double sum_g = 0.0, sum_gx = 0.0;
    for (i64 j = 0; j < d; ++j) {
      const double xhat = (xr[j] - m) * rs;
      const double g = gr[j] * gain[j];
      sum_g += g;
      sum_gx += g * xhat;
    }
    sum_g *= inv_d;
    sum_gx *= inv_d;
    for (i64 j = 0; j < d; ++j) {
      const double xhat = (xr[j] - m) * rs;
      const double g = gr[j] * gain[j];
      gxr[j] += rs * (g - sum_g - xhat * sum_gx);
    }
  }
  // Column-major passes so the accumulation order matches the OpenMP
  // backend's per-column reduction.
  for (i64 j = 0; j < d; ++j) {
    double sg = 0.0, sb = 0.0;
    for (i64 r = 0; r < rows; ++r) {
      const double xhat = (x[r * d + j] - mean[r]) * rstd[r];
      sg += gout[r * d + j] * xhat;
      sb += gout[r * d + j];
    }
    ggain[j] += sg;
    gbias[j] += sb;
  }
}

double reduce_sum(const double* x, i64 n) {
  // Fixed-size chunking keeps the result independent of backend and thread
  // count; partials are combined in chunk order.
  const i64 nchunks = (n + kReduceChunk - 1) / kReduceChunk;
  double total = 0.0;
  for (i64 c = 0; c < nchunks; ++c) {
    const i64 lo = c * kReduceChunk;
    const i64 hi = std::min(n, lo + kReduceChunk);
    double s = 0.0;
    for (i64 i = lo; i < hi; ++i) s += x[i];
    total += s;
  }
  return total;
}

void accumulate(double* dst, const double* src, i64 n) {
  for (i64 i = 0; i < n; ++i) dst[i] += src[i];
}

void accumulate_scaled(double* dst, const double* src, double c, i64 n) {
  for (i64 i = 0; i < n; ++i) dst[i] += c * src[i];
}

void gather_rows(const double* table, i64 d, const i64* ids, i64 nrows, double* out) {
  for (i64 r = 0; r < nrows; ++r) {
    const double* src = table + ids[r] * d;
    double* dst = out + r * d;
    std::copy(src, src + d, dst);
  }
}

void scatter_add_rows(const double* gout, const i64* ids, i64 nrows, i64 d,
                      double* gtable) {
  for (i64 r = 0; r < nrows; ++r) {
    const double* src = gout + r * d;
    double* dst = gtable + ids[r] * d;
    for (i64 j = 0; j < d; ++j) dst[j] += src[j];
  }
}

}  // namespace mgdin::kernels::serial
