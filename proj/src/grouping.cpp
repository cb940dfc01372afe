#include "mgdin/grouping.hpp"

#include "mgdin/common.hpp"

namespace mgdin {

using i64 = std::int64_t;

void WindowSpec::validate(i64 n_features) const {
  if (granularities.empty()) throw ConfigError("windows: at least one granularity required");
  if (d_model < 1) throw ConfigError("windows: d_model must be positive");
  for (i64 g : granularities) {
    if (g < 1) throw ConfigError("windows: granularity must be positive");
    if (g > n_features)
      throw ConfigError("windows: granularity " + std::to_string(g) + " exceeds feature count " +
                        std::to_string(n_features));
  }
}

i64 group_count(i64 n_features, i64 granularity) {
  return (n_features + granularity - 1) / granularity;
}

i64 mask_entries_per_example(i64 n_features, const std::vector<i64>& granularities) {
  i64 total = 0;
  for (i64 g : granularities) {
    const i64 m = group_count(n_features, g);
    total += m * m;
  }
  return total;
}

GroupedRepresentation partition(Tape* tape, const Tensor& embedded, i64 window_index,
                                i64 granularity, const Tensor& null_row,
                                GroupCombine combine) {
  if (embedded.rank() != 3)
    throw ShapeError("partition: expected [batch, n, d_embed], got " +
                     shape_str(embedded.shape()));
  const i64 B = embedded.dim(0), n = embedded.dim(1), e = embedded.dim(2);
  const i64 m = group_count(n, granularity);
  const i64 pad = m * granularity - n;

  Tensor padded = pad > 0 ? append_rows(tape, embedded, null_row, pad) : embedded;
  GroupedRepresentation rep;
  rep.window = window_index;
  rep.layer = 0;
  if (combine == GroupCombine::Concat) {
    // Row-major [B, m*g, e] already lays out each run of g embeddings
    // contiguously, so the concatenated view is a reshape.
    rep.tokens = reshape(tape, padded, {B, m, granularity * e});
  } else {
    rep.tokens = sum_groups(tape, padded, granularity);
  }
  return rep;
}

GroupedRepresentation input_project(Tape* tape, const GroupedRepresentation& grouped,
                                    const Tensor& w_in, const Tensor& b_in) {
  const i64 width = grouped.tokens.dim(2);
  if (w_in.rank() != 2 || w_in.dim(0) != width)
    throw ShapeError("input_project: weight shape " + shape_str(w_in.shape()) +
                     " does not accept token width " + std::to_string(width));
  GroupedRepresentation out;
  out.window = grouped.window;
  out.layer = 0;
  out.tokens = add(tape, matmul(tape, grouped.tokens, w_in), b_in);
  return out;
}

}  // namespace mgdin
