#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mgdin/common.hpp"

namespace mgdin {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

struct TensorStorage {
  Shape shape;
  std::vector<double> values;
  // Lazily allocated: empty means "no gradient has been accumulated yet",
  // which backward closures use to skip dead branches.
  std::vector<double> grad;
  bool requires_grad = false;
  const Tape* producer = nullptr;
};

// Dense row-major fp64 tensor. Values are immutable once an op has consumed
// the tensor; only gradients accumulate. Copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> values);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return s_->shape[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(s_->values.size()); }

  std::span<const double> values() const { return s_->values; }
  std::span<double> values_mut() { return s_->values; }
  double scalar_value() const;
  double at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const { return s_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    s_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  // Allocates a zero gradient buffer if none exists yet.
  void ensure_grad();
  void clear_grad() { s_->grad.clear(); }
  std::span<double> grad_mut();
  std::span<const double> grad() const;
  std::vector<double> grad_or_zeros() const;

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  std::shared_ptr<TensorStorage> storage() const { return s_; }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage> s_;
  friend class Tape;
  friend Tensor make_tensor(Shape, std::vector<double>);
};

Tensor make_tensor(Shape shape, std::vector<double> values);

// Linear record of executed ops. Ops are appended in execution order, which
// is a topological order by construction; backward replays the record once
// in reverse. One tape per forward/backward cycle.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Called by ops after computing out's values. Marks out as produced by
  // this tape and, when grad_flows, registers the backward step.
  void record(Tensor& out, bool grad_flows, std::function<void()> backward_step);

  // Seeds d(root)/d(root) = 1 and replays the tape in reverse, visiting each
  // recorded op exactly once. Gradients accumulate additively across fan-out.
  void backward(const Tensor& root);

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

enum class Pooling { Mean, Sum, Max };

// --- ops -------------------------------------------------------------------
// All ops take the tape as first argument; pass nullptr to compute detached
// (no recording, result does not require grad).

// [.., p, q] x [.., q, r] -> [.., p, r]. Batch dims must match exactly or one
// operand may omit them (rank 2), in which case it is shared across the batch.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);

// Binary elementwise; shapes must be equal, or one operand a scalar, or one
// operand's shape a trailing suffix of the other's (leading-dim broadcast).
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);

Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor relu(Tape* tape, const Tensor& x);
// Elementwise natural log; throws NumericError on any non-positive input.
Tensor log(Tape* tape, const Tensor& x);
Tensor scale(Tape* tape, const Tensor& x, double c);
// Clamp to [lo, hi]; gradient passes through inside the interval.
Tensor clamp(Tape* tape, const Tensor& x, double lo, double hi);

Tensor transpose_last_two(Tape* tape, const Tensor& x);

// Standardize over the last axis, then per-coordinate affine gain/bias.
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, double eps);

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape);
Tensor sum_all(Tape* tape, const Tensor& x);
Tensor mean_all(Tape* tape, const Tensor& x);

// [B, m, d] -> [B, d]; Max breaks ties toward the lowest token index.
Tensor pool_tokens(Tape* tape, const Tensor& x, Pooling kind);

// Concatenate rank-2 tensors [B, d_i] along the last axis.
Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts);

// Append `count` copies of `row` [e] to every example of x [B, n, e].
Tensor append_rows(Tape* tape, const Tensor& x, const Tensor& row,
                   std::int64_t count);

// [B, m*g, e] -> [B, m, e], summing each consecutive run of g rows.
Tensor sum_groups(Tape* tape, const Tensor& x, std::int64_t group);

// Reorder axis-1 rows of x [B, n, e] by `order` (a permutation of 0..n-1).
Tensor permute_rows(Tape* tape, const Tensor& x, std::span<const std::int64_t> order);

// Row-wise softmax over entries where mask == 1; masked entries are 0. Rows
// with an all-zero mask stay all-zero. Gradient flows only through scores.
Tensor masked_softmax_rows(Tape* tape, const Tensor& scores, const Tensor& mask);

}  // namespace mgdin
