#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mgdin/grouping.hpp"
#include "mgdin/tensor.hpp"

namespace mgdin {

enum class ScoreNorm { None, MaskedSoftmax };
enum class TopkScope { Global, PerRow };

// Per-(window, layer) parameters of one deferred-interaction block.
struct LayerParams {
  Tensor q, k, v;          // [d_model, d_model]
  Tensor ffn_w1, ffn_b1;   // [d_model, d_ff], [d_ff]
  Tensor ffn_w2, ffn_b2;   // [d_ff, d_model], [d_model]
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
};

struct MaskSchedule {
  std::int64_t layers = 0;
  std::vector<double> ratios;      // effective per-layer sparsity ratios
  std::vector<std::int64_t> k;     // activations per example and layer
  std::vector<Tensor> masks;       // per layer: [batch, m, m], entries in {0,1}
};

// Default schedule: ratio_l = l / L.
std::vector<double> default_ratios(std::int64_t layers);

// Ratios must have length L, lie in (0, 1], be non-decreasing, and end at 1.
void validate_ratios(const std::vector<double>& ratios, std::int64_t layers);

// Activation count for one layer. Global scope budgets the whole m x m
// matrix: floor(ratio * m^2), clamped to at least one active entry so a
// single-group window is fully active at every layer. PerRow budgets each row
// with floor(ratio * m), same clamp, and the returned count is the whole-
// matrix total m * per_row.
std::int64_t activation_count(std::int64_t m, double ratio, TopkScope scope);

// Layer-0 score matrix A^h_0 = (X Q0)(X K0)^T. Computed detached: the only
// consumer is the (piecewise-constant) top-k indicator, so no gradient path
// exists and Q0/K0 stay frozen unless tied to layer 1 by config.
Tensor score_layer0(const GroupedRepresentation& x0, const Tensor& q0, const Tensor& k0);

// Ranks a0 per example (descending score, ties by ascending row-major index)
// and marks the top k_l entries per layer. Masks are nested and carry no
// gradient.
MaskSchedule build_masks(const Tensor& a0, std::int64_t layers,
                         const std::optional<std::vector<double>>& ratios,
                         TopkScope scope = TopkScope::Global);

// Z_l = [ (X Q_l)(X K_l)^T  *  mask ] (X V_l). Fresh scores each layer; raw
// products, no softmax and no 1/sqrt(d) scaling unless norm says otherwise.
Tensor masked_attention(Tape* tape, const Tensor& x_prev, const LayerParams& params,
                        const Tensor& mask, ScoreNorm norm);

// Residual + LayerNorm + per-token feed-forward + residual + LayerNorm.
Tensor block(Tape* tape, const Tensor& x_prev, const Tensor& z,
             const LayerParams& params, double ln_eps);

}  // namespace mgdin
