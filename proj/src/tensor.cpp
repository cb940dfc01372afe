#include "mgdin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mgdin/kernels.hpp"

namespace mgdin {

using kernels::BinaryOp;
using kernels::UnaryOp;
using i64 = std::int64_t;

std::int64_t shape_numel(const Shape& s) {
  i64 n = 1;
  for (i64 d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void validate_shape(const Shape& s) {
  for (i64 d : s) require(d > 0, "tensor shape extents must be positive, got " + shape_str(s));
}

void ensure_grad_storage(TensorStorage& s) {
  if (s.grad.empty()) s.grad.assign(s.values.size(), 0.0);
}

}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<i64>(values.size()))
    throw ShapeError("tensor: " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  auto s = std::make_shared<TensorStorage>();
  s->shape = std::move(shape);
  s->values = std::move(values);
  return Tensor(std::move(s));
}

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double value) { return make_tensor({1}, {value}); }

Tensor Tensor::param(Shape shape, std::vector<double> values) {
  Tensor t = make_tensor(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

double Tensor::scalar_value() const {
  require(numel() == 1, "scalar_value: tensor has shape " + shape_str(shape()));
  return s_->values[0];
}

double Tensor::at(std::initializer_list<i64> idx) const {
  require(idx.size() == rank(), "at: index rank mismatch");
  i64 flat = 0;
  std::size_t k = 0;
  for (i64 i : idx) {
    require(i >= 0 && i < s_->shape[k], "at: index out of range");
    flat = flat * s_->shape[k] + i;
    ++k;
  }
  return s_->values[static_cast<std::size_t>(flat)];
}

void Tensor::ensure_grad() { ensure_grad_storage(*s_); }

std::span<double> Tensor::grad_mut() {
  ensure_grad();
  return s_->grad;
}

std::span<const double> Tensor::grad() const {
  if (s_->grad.empty())
    throw ShapeError("grad: no gradient accumulated for this tensor");
  return s_->grad;
}

std::vector<double> Tensor::grad_or_zeros() const {
  if (s_->grad.empty()) return std::vector<double>(s_->values.size(), 0.0);
  return s_->grad;
}

void Tape::record(Tensor& out, bool grad_flows, std::function<void()> backward_step) {
  out.s_->producer = this;
  if (grad_flows) {
    out.s_->requires_grad = true;
    steps_.push_back(std::move(backward_step));
  }
}

void Tape::backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ShapeError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  if (root.storage()->producer != this)
    throw ShapeError("backward: root tensor was not produced on this tape");
  root.storage()->grad.assign(1, 1.0);
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// --- broadcast planning ------------------------------------------------------

namespace {

struct BcastPlan {
  Shape out_shape;
  i64 n, an, bn;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() >= big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  const i64 na = shape_numel(a), nb = shape_numel(b);
  if (a == b) return {a, na, na, nb};
  if (nb == 1) return {a, na, na, 1};
  if (na == 1) return {b, nb, 1, nb};
  if (is_suffix(b, a)) return {a, na, na, nb};
  if (is_suffix(a, b)) return {b, nb, na, nb};
  throw ShapeError("elementwise: shapes " + shape_str(a) + " and " + shape_str(b) +
                   " are not equal, scalar, or leading-dim broadcastable");
}

Tensor binary_op(Tape* tape, BinaryOp op, const Tensor& a, const Tensor& b) {
  BcastPlan plan = plan_broadcast(a.shape(), b.shape());
  Tensor out = Tensor::zeros(plan.out_shape);
  kernels::ew_binary(op, a.values().data(), plan.an, b.values().data(), plan.bn,
                     out.values_mut().data(), plan.n);
  if (!tape) return out;
  const bool flows = a.requires_grad() || b.requires_grad();
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  tape->record(out, flows, [op, as, bs, os, plan]() {
    if (os->grad.empty()) return;
    if (as->requires_grad) {
      ensure_grad_storage(*as);
      kernels::ew_binary_grad_a(op, as->values.data(), plan.an, bs->values.data(),
                                plan.bn, os->grad.data(), as->grad.data(), plan.n);
    }
    if (bs->requires_grad) {
      ensure_grad_storage(*bs);
      kernels::ew_binary_grad_b(op, as->values.data(), plan.an, bs->values.data(),
                                plan.bn, os->grad.data(), bs->grad.data(), plan.n);
    }
  });
  return out;
}

Tensor unary_op(Tape* tape, UnaryOp op, const Tensor& x, double c0, double c1) {
  Tensor out = Tensor::zeros(x.shape());
  kernels::ew_unary(op, x.values().data(), out.values_mut().data(), x.numel(), c0, c1);
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [op, xs, os, c0, c1]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    kernels::ew_unary_grad(op, xs->values.data(), os->values.data(), os->grad.data(),
                           xs->grad.data(), static_cast<i64>(xs->values.size()), c0, c1);
  });
  return out;
}

}  // namespace

// --- ops ---------------------------------------------------------------------

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && b.rank() >= 2,
          "matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  const i64 p = a.dim(a.rank() - 2), q = a.dim(a.rank() - 1);
  const i64 q2 = b.dim(b.rank() - 2), r = b.dim(b.rank() - 1);
  require(q == q2, "matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));

  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  const i64 ab = shape_numel(lead_a), bb = shape_numel(lead_b);
  bool a_bcast = false, b_bcast = false;
  Shape lead_out;
  i64 batch;
  if (lead_a == lead_b) {
    lead_out = lead_a;
    batch = ab;
  } else if (ab == 1 && bb == 1) {
    // Same single batch, ranks differ only by size-1 dims; keep the higher rank.
    lead_out = lead_a.size() >= lead_b.size() ? lead_a : lead_b;
    batch = 1;
  } else if (bb == 1) {
    b_bcast = true;
    lead_out = lead_a;
    batch = ab;
  } else if (ab == 1) {
    a_bcast = true;
    lead_out = lead_b;
    batch = bb;
  } else {
    throw ShapeError("matmul: batch dimensions disagree: " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }

  Shape out_shape = lead_out;
  out_shape.push_back(p);
  out_shape.push_back(r);
  Tensor out = Tensor::zeros(out_shape);
  kernels::matmul(a.values().data(), b.values().data(), out.values_mut().data(),
                  batch, p, q, r, a_bcast, b_bcast);
  if (!tape) return out;
  const bool flows = a.requires_grad() || b.requires_grad();
  auto as = a.storage(), bs = b.storage(), os = out.storage();
  tape->record(out, flows, [as, bs, os, batch, p, q, r, a_bcast, b_bcast]() {
    if (os->grad.empty()) return;
    if (as->requires_grad) {
      ensure_grad_storage(*as);
      kernels::matmul_grad_a(os->grad.data(), bs->values.data(), as->grad.data(),
                             batch, p, q, r, a_bcast, b_bcast);
    }
    if (bs->requires_grad) {
      ensure_grad_storage(*bs);
      kernels::matmul_grad_b(as->values.data(), os->grad.data(), bs->grad.data(),
                             batch, p, q, r, a_bcast, b_bcast);
    }
  });
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, BinaryOp::Add, a, b);
}
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, BinaryOp::Sub, a, b);
}
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  return binary_op(tape, BinaryOp::Mul, a, b);
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  return unary_op(tape, UnaryOp::Sigmoid, x, 0.0, 0.0);
}
Tensor relu(Tape* tape, const Tensor& x) {
  return unary_op(tape, UnaryOp::Relu, x, 0.0, 0.0);
}

Tensor log(Tape* tape, const Tensor& x) {
  const auto vals = x.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    if (!(vals[i] > 0.0))
      throw NumericError("log: domain error, non-positive input " +
                         std::to_string(vals[i]) + " at flat index " + std::to_string(i));
  }
  return unary_op(tape, UnaryOp::Log, x, 0.0, 0.0);
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
  return unary_op(tape, UnaryOp::Scale, x, c, 0.0);
}

Tensor clamp(Tape* tape, const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo must not exceed hi");
  return unary_op(tape, UnaryOp::Clamp, x, lo, hi);
}

Tensor transpose_last_two(Tape* tape, const Tensor& x) {
  require(x.rank() >= 2, "transpose_last_two: rank must be >= 2, got " +
                             shape_str(x.shape()));
  const i64 p = x.dim(x.rank() - 2), q = x.dim(x.rank() - 1);
  const i64 batch = x.numel() / (p * q);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape);
  kernels::transpose_last_two(x.values().data(), out.values_mut().data(), batch, p, q);
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os, batch, p, q]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    std::vector<double> tmp(xs->values.size());
    kernels::transpose_last_two(os->grad.data(), tmp.data(), batch, q, p);
    kernels::accumulate(xs->grad.data(), tmp.data(), static_cast<i64>(tmp.size()));
  });
  return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps) {
  require(x.rank() >= 1, "layer_norm: rank must be >= 1");
  const i64 d = x.dim(x.rank() - 1);
  require(gain.rank() == 1 && gain.dim(0) == d,
          "layer_norm: gain shape " + shape_str(gain.shape()) + " != [" + std::to_string(d) + "]");
  require(bias.rank() == 1 && bias.dim(0) == d,
          "layer_norm: bias shape " + shape_str(bias.shape()) + " != [" + std::to_string(d) + "]");
  if (eps < 0.0) throw NumericError("layer_norm: eps must be non-negative");
  if (d == 1 && eps == 0.0)
    throw NumericError("layer_norm: d == 1 with eps == 0 would divide by zero");
  const i64 rows = x.numel() / d;

  Tensor out = Tensor::zeros(x.shape());
  auto saved_mean = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  auto saved_rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  kernels::layer_norm(x.values().data(), gain.values().data(), bias.values().data(),
                      out.values_mut().data(), saved_mean->data(), saved_rstd->data(),
                      rows, d, eps);
  if (!tape) return out;
  const bool flows = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  auto xs = x.storage(), gs = gain.storage(), bs = bias.storage(), os = out.storage();
  tape->record(out, flows, [xs, gs, bs, os, saved_mean, saved_rstd, rows, d]() {
    if (os->grad.empty()) return;
    std::vector<double> scratch_x, scratch_g, scratch_b;
    double* gx;
    double* ggain;
    double* gbias;
    if (xs->requires_grad) {
      ensure_grad_storage(*xs);
      gx = xs->grad.data();
    } else {
      scratch_x.assign(xs->values.size(), 0.0);
      gx = scratch_x.data();
    }
    if (gs->requires_grad) {
      ensure_grad_storage(*gs);
      ggain = gs->grad.data();
    } else {
      scratch_g.assign(gs->values.size(), 0.0);
      ggain = scratch_g.data();
    }
    if (bs->requires_grad) {
      ensure_grad_storage(*bs);
      gbias = bs->grad.data();
    } else {
      scratch_b.assign(bs->values.size(), 0.0);
      gbias = scratch_b.data();
    }
    kernels::layer_norm_grad(xs->values.data(), gs->values.data(), saved_mean->data(),
                             saved_rstd->data(), os->grad.data(), gx, ggain, gbias,
                             rows, d);
  });
  return out;
}

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
              " changes element count");
  Tensor out = make_tensor(std::move(new_shape),
                           std::vector<double>(x.values().begin(), x.values().end()));
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    kernels::accumulate(xs->grad.data(), os->grad.data(),
                        static_cast<i64>(xs->grad.size()));
  });
  return out;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::scalar(kernels::reduce_sum(x.values().data(), x.numel()));
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    const double g = os->grad[0];
    for (double& v : xs->grad) v += g;
  });
  return out;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(kernels::reduce_sum(x.values().data(), x.numel()) * inv_n);
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os, inv_n]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    const double g = os->grad[0] * inv_n;
    for (double& v : xs->grad) v += g;
  });
  return out;
}

Tensor pool_tokens(Tape* tape, const Tensor& x, Pooling kind) {
  require(x.rank() == 3, "pool_tokens: expected [batch, tokens, width], got " +
                             shape_str(x.shape()));
  const i64 B = x.dim(0), m = x.dim(1), d = x.dim(2);
  Tensor out = Tensor::zeros({B, d});
  auto argmax = std::make_shared<std::vector<i64>>();
  const double* xv = x.values().data();
  double* ov = out.values_mut().data();
  if (kind == Pooling::Max) argmax->assign(static_cast<std::size_t>(B * d), 0);
  kernels::parallel_for(B, m * d, [&](i64 b) {
    const double* xb = xv + b * m * d;
    double* ob = ov + b * d;
    switch (kind) {
      case Pooling::Mean:
      case Pooling::Sum: {
        for (i64 i = 0; i < m; ++i)
          for (i64 j = 0; j < d; ++j) ob[j] += xb[i * d + j];
        if (kind == Pooling::Mean) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (i64 j = 0; j < d; ++j) ob[j] *= inv_m;
        }
        break;
      }
      case Pooling::Max: {
        i64* am = argmax->data() + b * d;
        for (i64 j = 0; j < d; ++j) ob[j] = xb[j];
        for (i64 i = 1; i < m; ++i)
          for (i64 j = 0; j < d; ++j) {
            const double v = xb[i * d + j];
            if (v > ob[j]) {
              ob[j] = v;
              am[j] = i;
            }
          }
        break;
      }
    }
  });
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os, argmax, kind, B, m, d]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    double* gx = xs->grad.data();
    const double* go = os->grad.data();
    const double w = (kind == Pooling::Mean) ? 1.0 / static_cast<double>(m) : 1.0;
    kernels::parallel_for(B, m * d, [&](i64 b) {
      double* gxb = gx + b * m * d;
      const double* gob = go + b * d;
      if (kind == Pooling::Max) {
        const i64* am = argmax->data() + b * d;
        for (i64 j = 0; j < d; ++j) gxb[am[j] * d + j] += gob[j];
      } else {
        for (i64 i = 0; i < m; ++i)
          for (i64 j = 0; j < d; ++j) gxb[i * d + j] += w * gob[j];
      }
    });
  });
  return out;
}

Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const i64 B = parts[0].dim(0);
  i64 total = 0;
  bool flows = false;
  for (const auto& p : parts) {
    require(p.rank() == 2, "concat_cols: expected rank-2 parts");
    require(p.dim(0) == B, "concat_cols: batch sizes disagree");
    total += p.dim(1);
    flows = flows || p.requires_grad();
  }
  Tensor out = Tensor::zeros({B, total});
  double* ov = out.values_mut().data();
  i64 offset = 0;
  for (const auto& p : parts) {
    const i64 d = p.dim(1);
    const double* pv = p.values().data();
    kernels::parallel_for(B, d, [&](i64 b) {
      std::copy(pv + b * d, pv + (b + 1) * d, ov + b * total + offset);
    });
    offset += d;
  }
  if (!tape) return out;
  std::vector<std::shared_ptr<TensorStorage>> storages;
  storages.reserve(parts.size());
  for (const auto& p : parts) storages.push_back(p.storage());
  auto os = out.storage();
  tape->record(out, flows, [storages, os, B, total]() {
    if (os->grad.empty()) return;
    const double* go = os->grad.data();
    i64 offset = 0;
    for (const auto& ps : storages) {
      const i64 d = static_cast<i64>(ps->values.size()) / B;
      if (ps->requires_grad) {
        ensure_grad_storage(*ps);
        double* gp = ps->grad.data();
        kernels::parallel_for(B, d, [&](i64 b) {
          const double* src = go + b * total + offset;
          double* dst = gp + b * d;
          for (i64 j = 0; j < d; ++j) dst[j] += src[j];
        });
      }
      offset += d;
    }
  });
  return out;
}

Tensor append_rows(Tape* tape, const Tensor& x, const Tensor& row, i64 count) {
  require(x.rank() == 3, "append_rows: expected [batch, rows, width], got " +
                             shape_str(x.shape()));
  require(count >= 0, "append_rows: count must be non-negative");
  const i64 B = x.dim(0), n = x.dim(1), e = x.dim(2);
  require(row.rank() == 1 && row.dim(0) == e,
          "append_rows: row width " + shape_str(row.shape()) + " != width " + std::to_string(e));
  Tensor out = Tensor::zeros({B, n + count, e});
  const double* xv = x.values().data();
  const double* rv = row.values().data();
  double* ov = out.values_mut().data();
  kernels::parallel_for(B, (n + count) * e, [&](i64 b) {
    double* ob = ov + b * (n + count) * e;
    std::copy(xv + b * n * e, xv + (b + 1) * n * e, ob);
    for (i64 p = 0; p < count; ++p)
      std::copy(rv, rv + e, ob + (n + p) * e);
  });
  if (!tape) return out;
  const bool flows = x.requires_grad() || row.requires_grad();
  auto xs = x.storage(), rs = row.storage(), os = out.storage();
  tape->record(out, flows, [xs, rs, os, B, n, e, count]() {
    if (os->grad.empty()) return;
    const double* go = os->grad.data();
    if (xs->requires_grad) {
      ensure_grad_storage(*xs);
      double* gx = xs->grad.data();
      kernels::parallel_for(B, n * e, [&](i64 b) {
        const double* src = go + b * (n + count) * e;
        double* dst = gx + b * n * e;
        for (i64 i = 0; i < n * e; ++i) dst[i] += src[i];
      });
    }
    if (rs->requires_grad && count > 0) {
      ensure_grad_storage(*rs);
      double* gr = rs->grad.data();
      for (i64 b = 0; b < B; ++b)
        for (i64 p = 0; p < count; ++p) {
          const double* src = go + (b * (n + count) + n + p) * e;
          for (i64 j = 0; j < e; ++j) gr[j] += src[j];
        }
    }
  });
  return out;
}

Tensor sum_groups(Tape* tape, const Tensor& x, i64 group) {
  require(x.rank() == 3, "sum_groups: expected rank-3 input");
  require(group >= 1, "sum_groups: group must be positive");
  const i64 B = x.dim(0), M = x.dim(1), e = x.dim(2);
  require(M % group == 0, "sum_groups: rows " + std::to_string(M) +
                              " not divisible by group " + std::to_string(group));
  const i64 m = M / group;
  Tensor out = Tensor::zeros({B, m, e});
  const double* xv = x.values().data();
  double* ov = out.values_mut().data();
  kernels::parallel_for(B, M * e, [&](i64 b) {
    for (i64 i = 0; i < m; ++i) {
      double* dst = ov + (b * m + i) * e;
      for (i64 t = 0; t < group; ++t) {
        const double* src = xv + (b * M + i * group + t) * e;
        for (i64 j = 0; j < e; ++j) dst[j] += src[j];
      }
    }
  });
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os, B, M, e, m, group]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    double* gx = xs->grad.data();
    const double* go = os->grad.data();
    kernels::parallel_for(B, M * e, [&](i64 b) {
      for (i64 i = 0; i < m; ++i) {
        const double* src = go + (b * m + i) * e;
        for (i64 t = 0; t < group; ++t) {
          double* dst = gx + (b * M + i * group + t) * e;
          for (i64 j = 0; j < e; ++j) dst[j] += src[j];
        }
      }
    });
  });
  return out;
}

Tensor permute_rows(Tape* tape, const Tensor& x, std::span<const i64> order) {
  require(x.rank() == 3, "permute_rows: expected rank-3 input");
  const i64 B = x.dim(0), n = x.dim(1), e = x.dim(2);
  require(static_cast<i64>(order.size()) == n, "permute_rows: order length != rows");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (i64 idx : order) {
    require(idx >= 0 && idx < n && !seen[static_cast<std::size_t>(idx)],
            "permute_rows: order is not a permutation of 0.." + std::to_string(n - 1));
    seen[static_cast<std::size_t>(idx)] = true;
  }
  auto perm = std::make_shared<std::vector<i64>>(order.begin(), order.end());
  Tensor out = Tensor::zeros({B, n, e});
  const double* xv = x.values().data();
  double* ov = out.values_mut().data();
  kernels::parallel_for(B, n * e, [&](i64 b) {
    for (i64 i = 0; i < n; ++i) {
      const double* src = xv + (b * n + (*perm)[static_cast<std::size_t>(i)]) * e;
      std::copy(src, src + e, ov + (b * n + i) * e);
    }
  });
  if (!tape) return out;
  auto xs = x.storage(), os = out.storage();
  tape->record(out, x.requires_grad(), [xs, os, perm, B, n, e]() {
    if (os->grad.empty() || !xs->requires_grad) return;
    ensure_grad_storage(*xs);
    double* gx = xs->grad.data();
    const double* go = os->grad.data();
    kernels::parallel_for(B, n * e, [&](i64 b) {
      for (i64 i = 0; i < n; ++i) {
        const double* src = go + (b * n + i) * e;
        double* dst = gx + (b * n + (*perm)[static_cast<std::size_t>(i)]) * e;
        for (i64 j = 0; j < e; ++j) dst[j] += src[j];
      }
    });
  });
  return out;
}

Tensor masked_softmax_rows(Tape* tape, const Tensor& scores, const Tensor& mask) {
  require(scores.rank() >= 2, "masked_softmax_rows: rank must be >= 2");
  require(scores.shape() == mask.shape(),
          "masked_softmax_rows: mask shape " + shape_str(mask.shape()) +
              " != scores shape " + shape_str(scores.shape()));
  const i64 d = scores.dim(scores.rank() - 1);
  const i64 rows = scores.numel() / d;
  Tensor out = Tensor::zeros(scores.shape());
  const double* sv = scores.values().data();
  const double* mv = mask.values().data();
  double* ov = out.values_mut().data();
  kernels::parallel_for(rows, 4 * d, [&](i64 r) {
    const double* s = sv + r * d;
    const double* m = mv + r * d;
    double* o = ov + r * d;
    double mx = 0.0;
    bool any = false;
    for (i64 j = 0; j < d; ++j)
      if (m[j] > 0.5 && (!any || s[j] > mx)) {
        mx = s[j];
        any = true;
      }
    if (!any) return;  // row stays zero
    double z = 0.0;
    for (i64 j = 0; j < d; ++j) {
      if (m[j] > 0.5) {
        o[j] = std::exp(s[j] - mx);
        z += o[j];
      }
    }
    const double inv_z = 1.0 / z;
    for (i64 j = 0; j < d; ++j) o[j] *= inv_z;
  });
  if (!tape) return out;
  auto ss = scores.storage(), ms = mask.storage(), os = out.storage();
  tape->record(out, scores.requires_grad(), [ss, ms, os, rows, d]() {
    if (os->grad.empty() || !ss->requires_grad) return;
    ensure_grad_storage(*ss);
    double* gs = ss->grad.data();
    const double* go = os->grad.data();
    const double* pv = os->values.data();
    const double* mv = ms->values.data();
    kernels::parallel_for(rows, 4 * d, [&](i64 r) {
      const double* g = go + r * d;
      const double* p = pv + r * d;
      const double* m = mv + r * d;
      double dot = 0.0;
      for (i64 j = 0; j < d; ++j)
        if (m[j] > 0.5) dot += g[j] * p[j];
      double* out_g = gs + r * d;
      for (i64 j = 0; j < d; ++j)
        if (m[j] > 0.5) out_g[j] += p[j] * (g[j] - dot);
    });
  });
  return out;
}

}  // namespace mgdin
