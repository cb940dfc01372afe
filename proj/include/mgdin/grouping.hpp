#pragma once

#include <cstdint>
#include <vector>

#include "mgdin/tensor.hpp"

namespace mgdin {

enum class GroupCombine { Concat, SumPool };

struct WindowSpec {
  std::vector<std::int64_t> granularities;  // g_1 .. g_K
  std::int64_t d_model = 0;

  std::int64_t window_count() const { return static_cast<std::int64_t>(granularities.size()); }
  void validate(std::int64_t n_features) const;
};

struct GroupedRepresentation {
  std::int64_t window = 0;  // index h
  std::int64_t layer = 0;   // l of X^h_l
  Tensor tokens;            // [batch, m_h, width]
};

// Number of groups for n features at granularity g: ceil(n / g).
std::int64_t group_count(std::int64_t n_features, std::int64_t granularity);

// Per-example mask entries across all windows: sum of group_count^2. Stays
// below n^2 whenever every granularity is at least 2 and n exceeds the
// window count.
std::int64_t mask_entries_per_example(std::int64_t n_features,
                                      const std::vector<std::int64_t>& granularities);

// Split the embedded feature sequence [batch, n, d_embed] into groups of g
// consecutive features. The sequence is padded with the shared trainable
// null row up to group_count * g entries; Concat joins each run into one
// token of width g*d_embed, SumPool adds the run into width d_embed.
GroupedRepresentation partition(Tape* tape, const Tensor& embedded,
                                std::int64_t window_index, std::int64_t granularity,
                                const Tensor& null_row, GroupCombine combine);

// Affine map to the shared d_model width; produces X^h_0.
GroupedRepresentation input_project(Tape* tape, const GroupedRepresentation& grouped,
                                    const Tensor& w_in, const Tensor& b_in);

}  // namespace mgdin
