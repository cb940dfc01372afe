#include "mgdin/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mgdin/common.hpp"
#include "mgdin/kernels.hpp"

namespace mgdin {

using i64 = std::int64_t;

std::vector<double> default_ratios(i64 layers) {
  std::vector<double> r(static_cast<std::size_t>(layers));
  for (i64 l = 1; l <= layers; ++l)
    r[static_cast<std::size_t>(l - 1)] = static_cast<double>(l) / static_cast<double>(layers);
  return r;
}

void validate_ratios(const std::vector<double>& ratios, i64 layers) {
  if (static_cast<i64>(ratios.size()) != layers)
    throw ConfigError("ratios: expected " + std::to_string(layers) + " values, got " +
                      std::to_string(ratios.size()));
  double prev = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0 && r <= 1.0))
      throw ConfigError("ratios: values must lie in (0, 1], got " + std::to_string(r));
    if (r < prev)
      throw ConfigError("ratios: schedule must be non-decreasing (mask nesting)");
    prev = r;
  }
  if (ratios.back() != 1.0)
    throw ConfigError("ratios: final value must be 1.0 so the last layer is fully active");
}

i64 activation_count(i64 m, double ratio, TopkScope scope) {
  if (scope == TopkScope::Global) {
    const i64 k = static_cast<i64>(std::floor(ratio * static_cast<double>(m * m) + 1e-9));
    return std::max<i64>(1, k);
  }
  const i64 per_row = std::max<i64>(
      1, static_cast<i64>(std::floor(ratio * static_cast<double>(m) + 1e-9)));
  return m * per_row;
}

Tensor score_layer0(const GroupedRepresentation& x0, const Tensor& q0, const Tensor& k0) {
  const Tensor xq = matmul(nullptr, x0.tokens, q0);
  const Tensor xk = matmul(nullptr, x0.tokens, k0);
  return matmul(nullptr, xq, transpose_last_two(nullptr, xk));
}

MaskSchedule build_masks(const Tensor& a0, i64 layers,
                         const std::optional<std::vector<double>>& ratios,
                         TopkScope scope) {
  if (layers < 1) throw ConfigError("build_masks: layers must be >= 1");
  if (a0.rank() != 3 || a0.dim(1) != a0.dim(2))
    throw ShapeError("build_masks: expected square score matrix per example, got " +
                     shape_str(a0.shape()));
  const i64 B = a0.dim(0), m = a0.dim(1);

  MaskSchedule sched;
  sched.layers = layers;
  sched.ratios = ratios ? *ratios : default_ratios(layers);
  validate_ratios(sched.ratios, layers);
  sched.k.reserve(static_cast<std::size_t>(layers));
  for (double r : sched.ratios) sched.k.push_back(activation_count(m, r, scope));
  sched.masks.reserve(static_cast<std::size_t>(layers));
  for (i64 l = 0; l < layers; ++l) sched.masks.push_back(Tensor::zeros({B, m, m}));

  const double* av = a0.values().data();
  std::vector<double*> mask_vals(static_cast<std::size_t>(layers));
  for (i64 l = 0; l < layers; ++l)
    mask_vals[static_cast<std::size_t>(l)] = sched.masks[static_cast<std::size_t>(l)].values_mut().data();

  const i64 mm = m * m;
  kernels::parallel_for(B, 16 * mm, [&](i64 b) {
    const double* scores = av + b * mm;
    if (scope == TopkScope::Global) {
      std::vector<i64> order(static_cast<std::size_t>(mm));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [scores](i64 i, i64 j) {
        if (scores[i] != scores[j]) return scores[i] > scores[j];
        return i < j;  // deterministic tie-break: ascending row-major index
      });
      for (i64 l = 0; l < layers; ++l) {
        double* mv = mask_vals[static_cast<std::size_t>(l)] + b * mm;
        const i64 k = sched.k[static_cast<std::size_t>(l)];
        for (i64 t = 0; t < k; ++t) mv[order[static_cast<std::size_t>(t)]] = 1.0;
      }
    } else {
      std::vector<i64> order(static_cast<std::size_t>(m));
      for (i64 row = 0; row < m; ++row) {
        const double* rs = scores + row * m;
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [rs](i64 i, i64 j) {
          if (rs[i] != rs[j]) return rs[i] > rs[j];
          return i < j;
        });
        for (i64 l = 0; l < layers; ++l) {
          double* mv = mask_vals[static_cast<std::size_t>(l)] + b * mm + row * m;
          const i64 k_row = sched.k[static_cast<std::size_t>(l)] / m;
          for (i64 t = 0; t < k_row; ++t) mv[order[static_cast<std::size_t>(t)]] = 1.0;
        }
      }
    }
  });
  return sched;
}

Tensor masked_attention(Tape* tape, const Tensor& x_prev, const LayerParams& params,
                        const Tensor& mask, ScoreNorm norm) {
  const Tensor xq = matmul(tape, x_prev, params.q);
  const Tensor xk = matmul(tape, x_prev, params.k);
  const Tensor scores = matmul(tape, xq, transpose_last_two(tape, xk));
  if (mask.shape() != scores.shape())
    throw ShapeError("masked_attention: mask shape " + shape_str(mask.shape()) +
                     " does not match score shape " + shape_str(scores.shape()));
  const Tensor gated = norm == ScoreNorm::None ? mul(tape, scores, mask)
                                               : masked_softmax_rows(tape, scores, mask);
  const Tensor xv = matmul(tape, x_prev, params.v);
  return matmul(tape, gated, xv);
}

Tensor block(Tape* tape, const Tensor& x_prev, const Tensor& z,
             const LayerParams& params, double ln_eps) {
  const Tensor zhat =
      layer_norm(tape, add(tape, z, x_prev), params.ln1_gain, params.ln1_bias, ln_eps);
  const Tensor hidden = relu(tape, add(tape, matmul(tape, zhat, params.ffn_w1), params.ffn_b1));
  const Tensor ffn = add(tape, matmul(tape, hidden, params.ffn_w2), params.ffn_b2);
  return layer_norm(tape, add(tape, ffn, zhat), params.ln2_gain, params.ln2_bias, ln_eps);
}

}  // namespace mgdin
